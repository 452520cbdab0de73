#pragma once

#include <string>

#include "simulseq/common.hpp"

namespace simulseq {

// Token id layout for the two vocabularies. Gloss reserves id 0 for the CTC
// blank; content glosses are 1..gloss_content. Text reserves pad/bos/eos as
// 0/1/2; content words are 3..3+text_content-1. A gloss g maps to the text
// word g+2 under relabeling (text_content must cover gloss_content).
struct Vocabulary {
    int gloss_content = 0;
    int text_content = 0;

    static constexpr int kBlank = 0;
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kTextContentStart = 3;

    Vocabulary() = default;
    Vocabulary(int gloss_content_, int text_content_)
        : gloss_content(gloss_content_), text_content(text_content_) {
        if (gloss_content < 1 || text_content < 1)
            throw config_error("Vocabulary: content sizes must be >= 1");
        if (text_content < gloss_content)
            throw config_error("Vocabulary: text content must cover gloss content for relabeling");
    }

    int gloss_size() const { return gloss_content + 1; }        // + blank
    int text_size() const { return text_content + 3; }          // + pad/bos/eos

    bool valid_gloss(int id) const { return id >= 1 && id <= gloss_content; }
    bool valid_text(int id) const {
        return id >= kTextContentStart && id < kTextContentStart + text_content;
    }

    int relabel_gloss_to_text(int gloss_id) const {
        if (!valid_gloss(gloss_id))
            throw data_error("relabel: gloss id " + std::to_string(gloss_id) + " out of range");
        return gloss_id + 2;
    }

    std::string gloss_str(int id) const {
        if (id == kBlank) return "<blank>";
        return "g" + std::to_string(id);
    }
    std::string text_str(int id) const {
        if (id == kPad) return "<pad>";
        if (id == kBos) return "<bos>";
        if (id == kEos) return "<eos>";
        return "w" + std::to_string(id);
    }
};

}  // namespace simulseq
