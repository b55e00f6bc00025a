#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cooprag/core.hpp"

namespace cooprag {

// The five LLM prompt templates used by the pipeline. Placeholders are
// literal bracketed tokens: [question], [context], [sub_questions], [chain].
struct PromptTemplates {
    std::string unroll;      // question decomposition with uncertainty masks
    std::string completion;  // fill chain masks against retrieved documents
    std::string answer;      // final concise answer with <<ANS>> delimiters
    std::string key_extract; // iterative key-sentence selection
    std::string unified;     // completion + answer in one call

    // Templates compiled into the binary from assets/prompts/.
    static PromptTemplates builtin();

    // Starts from builtin() and overrides any template that has a matching
    // file (unroll.txt, completion.txt, answer.txt, key_extract.txt,
    // unified.txt) in the directory.
    static PromptTemplates load_dir(const std::filesystem::path& dir);

    // Every template must contain the placeholders its renderer substitutes,
    // and the unroll template must announce the four output-section markers
    // the parser anchors on.
    void validate() const;
};

// Replaces every occurrence of `placeholder` with `value` in one left-to-right
// pass; substituted text is never rescanned, so values containing placeholder
// syntax pass through untouched.
std::string substitute(std::string_view text, std::string_view placeholder,
                       std::string_view value);

// One "Document[i] (Title: ...) text" line per document, 1-based, newline
// separated. This is the [context] rendering for chain completion and
// answer prompts.
std::string render_context_block(const std::vector<Document>& docs);

// One "Document [i]: (Title: ...) text" line per document; the key-sentence
// prompt names documents in this spaced form and the parser echoes it back.
std::string render_key_extract_block(const std::vector<Document>& docs);

} // namespace cooprag
