#pragma once

#include <string>
#include <variant>
#include <vector>

#include "cooprag/core.hpp"
#include "cooprag/gateway.hpp"
#include "cooprag/prompts.hpp"

namespace cooprag {

// Everything the chain prompts need: the retrieved documents in rank order
// plus the decomposition of the question being answered.
struct CompletionContext {
    std::vector<Document> documents;
    std::string question;
    std::vector<std::string> sub_questions;
    ReasoningChain chain; // ReasoningChain has no default state, so aggregate
                          // construction must always supply one

    void validate() const;
};

inline constexpr int kDefaultChainAttempts = 3;

// Asks the model to ground every masked slot of ctx.chain in ctx.documents.
// The response chain may add triples but must keep zero masks; masks that
// survive all attempts raise IncompleteChain.
ReasoningChain complete_chain(const CompletionContext& ctx, ChatGateway& gateway,
                              const PromptTemplates& templates,
                              int max_attempts = kDefaultChainAttempts);

// Final concise answer, extracted from between <<ANS>> delimiters. The chain
// in ctx must already be mask-free. A deliberately empty answer comes back as
// an empty string rather than an error.
std::string generate_answer(const CompletionContext& ctx, ChatGateway& gateway,
                            const PromptTemplates& templates);

// Single-call variant producing the completed chain and the answer together.
struct UnifiedResult {
    ReasoningChain chain;
    std::string answer;
};

UnifiedResult unified_reason(const CompletionContext& ctx, ChatGateway& gateway,
                             const PromptTemplates& templates,
                             int max_attempts = kDefaultChainAttempts);

inline constexpr int kDefaultKeyExtractIterations = 3;

// How many reranked documents the key-extract prompt shows per round.
inline constexpr int kKeyExtractDocCount = 10;

// Accumulator for the iterative key-sentence loop. The augmented query both
// drives re-retrieval and fills the [question] slot of the key-extract
// prompt, so each round shows the model what was already selected.
struct KeyExtractState {
    int iteration = 0;
    std::vector<std::string> key_sentences;
    std::string augmented_query;
    int max_iterations = kDefaultKeyExtractIterations;
};

struct KeyExtractAnswer {
    std::string answer;
};

struct KeyExtractContinue {
    KeyExtractState state;
};

using KeyExtractOutcome = std::variant<KeyExtractAnswer, KeyExtractContinue>;

// One round: show the documents, ask for a key sentence and an answer
// verdict. "False" means not answerable yet; the chosen sentence is appended
// to the augmented query and the iteration counter advances. Calling with an
// exhausted state raises IterationLimitExceeded.
KeyExtractOutcome key_extract_step(const KeyExtractState& state,
                                   const std::vector<Document>& documents, ChatGateway& gateway,
                                   const PromptTemplates& templates);

} // namespace cooprag
