#include "cooprag/core.hpp"

namespace cooprag {

EntitySlot EntitySlot::text(std::string value) {
    if (value.empty()) {
        throw InvariantViolation("entity text must be non-empty");
    }
    if (value.find(kUncertainMask) != std::string::npos ||
        value.find(kFillMask) != std::string::npos) {
        throw InvariantViolation("entity text must not contain a mask literal: " + value);
    }
    return EntitySlot(Kind::Text, std::move(value));
}

EntitySlot EntitySlot::uncertain() {
    return EntitySlot(Kind::Uncertain, {});
}

EntitySlot EntitySlot::fill() {
    return EntitySlot(Kind::Fill, {});
}

const std::string& EntitySlot::value() const {
    if (kind_ != Kind::Text) {
        throw InvariantViolation("mask slot has no text value");
    }
    return value_;
}

std::string EntitySlot::render() const {
    switch (kind_) {
    case Kind::Text:
        return value_;
    case Kind::Uncertain:
        return kUncertainMask;
    case Kind::Fill:
        return kFillMask;
    }
    throw InvariantViolation("corrupt entity slot");
}

Triple::Triple(EntitySlot h, EntitySlot r, EntitySlot t)
    : head(std::move(h)), relation(std::move(r)), tail(std::move(t)) {
    if (relation.kind() == EntitySlot::Kind::Fill) {
        throw ChainInvariantViolation("relation slot must never be the fill placeholder");
    }
}

namespace {

int count_fills(const std::vector<Triple>& triples) {
    int fills = 0;
    for (const auto& t : triples) {
        if (t.head.kind() == EntitySlot::Kind::Fill) ++fills;
        if (t.relation.kind() == EntitySlot::Kind::Fill) ++fills;
        if (t.tail.kind() == EntitySlot::Kind::Fill) ++fills;
    }
    return fills;
}

} // namespace

ReasoningChain ReasoningChain::masked(std::vector<Triple> triples) {
    if (triples.empty()) {
        throw ChainInvariantViolation("reasoning chain must be non-empty");
    }
    const int fills = count_fills(triples);
    if (fills == 0) {
        throw ChainInvariantViolation("masked chain must contain a fill placeholder");
    }
    if (fills > 1) {
        throw ChainInvariantViolation("masked chain must contain exactly one fill placeholder");
    }
    if (triples.back().tail.kind() != EntitySlot::Kind::Fill) {
        throw ChainInvariantViolation("fill placeholder must be the tail of the last triple");
    }
    return ReasoningChain(std::move(triples));
}

ReasoningChain ReasoningChain::completed(std::vector<Triple> triples) {
    if (triples.empty()) {
        throw ChainInvariantViolation("reasoning chain must be non-empty");
    }
    for (const auto& t : triples) {
        if (t.head.is_mask() || t.relation.is_mask() || t.tail.is_mask()) {
            throw ChainInvariantViolation("completed chain must not contain mask slots");
        }
    }
    return ReasoningChain(std::move(triples));
}

bool ReasoningChain::has_masks() const {
    for (const auto& t : triples_) {
        if (t.head.is_mask() || t.relation.is_mask() || t.tail.is_mask()) {
            return true;
        }
    }
    return false;
}

UnrolledQuestion::UnrolledQuestion(std::string original,
                                   std::vector<std::string> sub_questions,
                                   ReasoningChain chain,
                                   int hop_count,
                                   std::string raw_llm_text)
    : original_(std::move(original)),
      sub_questions_(std::move(sub_questions)),
      chain_(std::move(chain)),
      hop_count_(hop_count),
      raw_llm_text_(std::move(raw_llm_text)) {
    if (original_.empty()) {
        throw InvariantViolation("unrolled question needs a non-empty original question");
    }
    if (hop_count_ < 1) {
        throw InvariantViolation("hop count must be a positive integer");
    }
    for (const auto& s : sub_questions_) {
        if (s.empty()) {
            throw InvariantViolation("sub-questions must be non-empty");
        }
    }
    // A chain is non-empty by construction, so an empty sub-question list is
    // always backed by at least one triple.
}

std::string serialize_unrolled(const UnrolledQuestion& u) {
    std::string out = u.original();
    for (const auto& s : u.sub_questions()) {
        out += ' ';
        out += s;
    }
    for (const auto& t : u.chain().triples()) {
        out += ' ';
        out += t.head.render();
        out += ' ';
        out += t.relation.render();
        out += ' ';
        out += t.tail.render();
    }
    return out;
}

} // namespace cooprag
