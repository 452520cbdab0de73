#pragma once

// Umbrella header for the simultaneous sequence-to-sequence engine.

#include "simulseq/boundary.hpp"
#include "simulseq/common.hpp"
#include "simulseq/config.hpp"
#include "simulseq/engine.hpp"
#include "simulseq/losses.hpp"
#include "simulseq/mask.hpp"
#include "simulseq/masked_encoder.hpp"
#include "simulseq/metrics.hpp"
#include "simulseq/model.hpp"
#include "simulseq/optim.hpp"
#include "simulseq/rng.hpp"
#include "simulseq/synthetic.hpp"
#include "simulseq/teacher_logits.hpp"
#include "simulseq/tensor.hpp"
#include "simulseq/training.hpp"
#include "simulseq/transformer.hpp"
#include "simulseq/vocab.hpp"
