#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "cooprag/core.hpp"
#include "cooprag/gateway.hpp"
#include "cooprag/prompts.hpp"

namespace cooprag {

inline constexpr int kDefaultUnrollAttempts = 3;

std::string render_unroll_prompt(const std::string& question, const PromptTemplates& templates);

// Parses the decomposition response: an integer after "Hop Count:", a
// bracketed quoted-string list after "Sub-questions:", and a bracketed list
// of three-element lists after "Triple Reasoning Chain:". Mask literals in
// chain entries become Uncertain/Fill slots. `question` is carried into the
// result; the response text does not restate it.
UnrolledQuestion parse_unroll_output(const std::string& text, const std::string& question);

// Renders the prompt, calls the gateway, and parses. Malformed responses are
// retried with the same prompt up to max_attempts total calls; gateway
// failures are not retried here (the gateway has its own retry policy).
UnrolledQuestion unroll(const std::string& question, ChatGateway& gateway,
                        const PromptTemplates& templates,
                        int max_attempts = kDefaultUnrollAttempts);

// -- bracketed-list text format, shared with the chain-completion parser --

using TripleStrings = std::array<std::string, 3>;

// Returns the first balanced bracketed list at or after `from`, respecting
// quotes and backslash escapes inside strings. Throws ParseError when no
// list opens or the list never closes.
std::string_view extract_bracketed(std::string_view text, std::size_t from);

std::vector<std::string> parse_string_list(std::string_view bracketed);
std::vector<TripleStrings> parse_triple_list(std::string_view bracketed);
std::string render_string_list(const std::vector<std::string>& items);
std::string render_triple_list(const std::vector<TripleStrings>& triples);

// Mask literals -> slots; everything else -> Text. Chain shape rules apply
// (exactly one trailing Fill and so on).
ReasoningChain masked_chain_from_strings(const std::vector<TripleStrings>& triples);
std::vector<TripleStrings> chain_to_strings(const ReasoningChain& chain);

// Drops a leading "SUB_Q<n>:" label that decomposition responses put in
// front of each sub-question.
std::string strip_subq_label(std::string_view sub_question);

} // namespace cooprag
