#pragma once

#include <string>
#include <vector>

#include "cooprag/errors.hpp"

namespace cooprag {

// Mask literals as they appear in prompts, LLM output, and serialized queries.
inline constexpr const char* kUncertainMask = "<UNCERTAIN>";
inline constexpr const char* kFillMask = "<FILL>";

struct Document {
    std::string id;
    std::string title;
    std::string text;

    bool operator==(const Document&) const = default;
};

// One position in a reasoning triple: either concrete text, an uncertainty
// mask for an entity the model would not commit to, or the answer placeholder.
class EntitySlot {
public:
    enum class Kind { Text, Uncertain, Fill };

    static EntitySlot text(std::string value);
    static EntitySlot uncertain();
    static EntitySlot fill();

    Kind kind() const { return kind_; }
    bool is_text() const { return kind_ == Kind::Text; }
    bool is_mask() const { return kind_ != Kind::Text; }

    // Text payload; throws InvariantViolation for mask slots.
    const std::string& value() const;

    // Text payload, or the mask literal for mask slots.
    std::string render() const;

    bool operator==(const EntitySlot&) const = default;

private:
    EntitySlot(Kind kind, std::string value) : kind_(kind), value_(std::move(value)) {}

    Kind kind_;
    std::string value_;
};

struct Triple {
    // Throws ChainInvariantViolation if the relation is a fill slot.
    Triple(EntitySlot head, EntitySlot relation, EntitySlot tail);

    EntitySlot head;
    EntitySlot relation;
    EntitySlot tail;

    bool operator==(const Triple&) const = default;
};

// Ordered triple sequence. A masked chain (the retrieval-time form) carries
// exactly one fill slot, sitting in the tail of the last triple; a completed
// chain carries no mask slots at all.
class ReasoningChain {
public:
    static ReasoningChain masked(std::vector<Triple> triples);
    static ReasoningChain completed(std::vector<Triple> triples);

    const std::vector<Triple>& triples() const { return triples_; }
    std::size_t size() const { return triples_.size(); }
    bool has_masks() const;

    bool operator==(const ReasoningChain&) const = default;

private:
    explicit ReasoningChain(std::vector<Triple> triples) : triples_(std::move(triples)) {}

    std::vector<Triple> triples_;
};

class UnrolledQuestion {
public:
    UnrolledQuestion(std::string original,
                     std::vector<std::string> sub_questions,
                     ReasoningChain chain,
                     int hop_count,
                     std::string raw_llm_text);

    const std::string& original() const { return original_; }
    const std::vector<std::string>& sub_questions() const { return sub_questions_; }
    const ReasoningChain& chain() const { return chain_; }
    int hop_count() const { return hop_count_; }
    const std::string& raw_llm_text() const { return raw_llm_text_; }

    bool operator==(const UnrolledQuestion&) const = default;

private:
    std::string original_;
    std::vector<std::string> sub_questions_;
    ReasoningChain chain_;
    int hop_count_;
    std::string raw_llm_text_;
};

struct RankedDocument {
    std::string doc_id;
    double score = 0.0;
    int rank = 0;

    bool operator==(const RankedDocument&) const = default;
};

struct QaExample {
    std::string id;
    std::string question;
    std::vector<std::string> gold_answers;
    std::vector<std::string> gold_doc_ids;

    bool operator==(const QaExample&) const = default;
};

// Flattens the question, its sub-questions, and the chain triples into the
// single query string fed to the encoder. Segments are joined by single
// spaces and mask slots render as their literals.
std::string serialize_unrolled(const UnrolledQuestion& u);

} // namespace cooprag
