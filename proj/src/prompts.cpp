#include "cooprag/prompts.hpp"

#include <fstream>
#include <sstream>
#include <utility>

#include "cooprag/errors.hpp"

namespace cooprag {

namespace assets {
// Defined in the generated prompt_assets.cpp.
extern const char* const kUnroll;
extern const char* const kCompletion;
extern const char* const kAnswer;
extern const char* const kKeyExtract;
extern const char* const kUnified;
} // namespace assets

PromptTemplates PromptTemplates::builtin() {
    PromptTemplates t;
    t.unroll = assets::kUnroll;
    t.completion = assets::kCompletion;
    t.answer = assets::kAnswer;
    t.key_extract = assets::kKeyExtract;
    t.unified = assets::kUnified;
    return t;
}

namespace {

void maybe_override(std::string& slot, const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) return;
    std::ostringstream body;
    body << in.rdbuf();
    slot = body.str();
}

void require_marker(const std::string& tpl, std::string_view marker, std::string_view which) {
    if (tpl.find(marker) == std::string::npos) {
        throw SchemaError(std::string(which) + " template is missing required text: " +
                          std::string(marker));
    }
}

} // namespace

PromptTemplates PromptTemplates::load_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("prompt directory does not exist: " + dir.string());
    }
    PromptTemplates t = builtin();
    maybe_override(t.unroll, dir / "unroll.txt");
    maybe_override(t.completion, dir / "completion.txt");
    maybe_override(t.answer, dir / "answer.txt");
    maybe_override(t.key_extract, dir / "key_extract.txt");
    maybe_override(t.unified, dir / "unified.txt");
    t.validate();
    return t;
}

void PromptTemplates::validate() const {
    require_marker(unroll, "[question]", "unroll");
    require_marker(unroll, "Hop Count:", "unroll");
    require_marker(unroll, "Reasoning Structure:", "unroll");
    require_marker(unroll, "Sub-questions:", "unroll");
    require_marker(unroll, "Triple Reasoning Chain:", "unroll");
    const std::pair<const std::string*, const char*> chain_prompts[] = {
        {&completion, "completion"}, {&answer, "answer"}, {&unified, "unified"}};
    for (const auto& [tpl, which] : chain_prompts) {
        require_marker(*tpl, "[context]", which);
        require_marker(*tpl, "[question]", which);
        require_marker(*tpl, "[sub_questions]", which);
        require_marker(*tpl, "[chain]", which);
    }
    require_marker(key_extract, "[question]", "key_extract");
    require_marker(key_extract, "[context]", "key_extract");
    require_marker(answer, "<<ANS>>", "answer");
}

std::string substitute(std::string_view text, std::string_view placeholder,
                       std::string_view value) {
    if (placeholder.empty()) throw InvariantViolation("empty placeholder");
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto hit = text.find(placeholder, pos);
        if (hit == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        out.append(text.substr(pos, hit - pos));
        out.append(value);
        pos = hit + placeholder.size();
    }
    return out;
}

std::string render_context_block(const std::vector<Document>& docs) {
    std::string out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (i > 0) out += '\n';
        out += "Document[" + std::to_string(i + 1) + "] (Title: " + docs[i].title + ") " +
               docs[i].text;
    }
    return out;
}

std::string render_key_extract_block(const std::vector<Document>& docs) {
    std::string out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (i > 0) out += '\n';
        out += "Document [" + std::to_string(i + 1) + "]: (Title: " + docs[i].title + ") " +
               docs[i].text;
    }
    return out;
}

} // namespace cooprag
