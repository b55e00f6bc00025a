#include "cooprag/chain.hpp"

#include <cctype>
#include <charconv>

#include "cooprag/errors.hpp"
#include "cooprag/unrolling.hpp"

namespace cooprag {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string render_chain_prompt(const std::string& tpl, const CompletionContext& ctx) {
    std::string out = substitute(tpl, "[context]", render_context_block(ctx.documents));
    out = substitute(out, "[question]", ctx.question);
    out = substitute(out, "[sub_questions]", render_string_list(ctx.sub_questions));
    out = substitute(out, "[chain]", render_triple_list(chain_to_strings(ctx.chain)));
    return out;
}

ChatRequest user_request(std::string prompt) {
    ChatRequest req;
    req.messages.push_back({ChatRole::User, std::move(prompt)});
    return req;
}

bool contains_mask_literal(const std::vector<TripleStrings>& triples) {
    for (const auto& t : triples) {
        for (const auto& s : t) {
            if (s == kUncertainMask || s == kFillMask) return true;
        }
    }
    return false;
}

// Pulls the triple list out of a completion response. The lead-in marker is
// optional: models sometimes answer with the bare list.
std::vector<TripleStrings> parse_response_chain(const std::string& response) {
    std::size_t from = 0;
    if (const auto marker = response.find("Reconstructed Reasoning Chain:");
        marker != std::string::npos) {
        from = marker;
    }
    return parse_triple_list(extract_bracketed(response, from));
}

ReasoningChain completed_from_strings(const std::vector<TripleStrings>& triples) {
    std::vector<Triple> out;
    out.reserve(triples.size());
    for (const auto& t : triples) {
        for (const auto& s : t) {
            if (s.empty()) throw ParseError("empty chain entry element");
        }
        out.emplace_back(EntitySlot::text(t[0]), EntitySlot::text(t[1]),
                         EntitySlot::text(t[2]));
    }
    return ReasoningChain::completed(std::move(out));
}

std::string extract_delimited_answer(const std::string& response) {
    const std::string delim = "<<ANS>>";
    const auto first = response.find(delim);
    if (first == std::string::npos) {
        throw AnswerDelimiterMissing("response has no <<ANS>> delimiter");
    }
    const auto start = first + delim.size();
    const auto second = response.find(delim, start);
    if (second == std::string::npos) {
        throw AnswerDelimiterMissing("response has no closing <<ANS>> delimiter");
    }
    return trim(std::string_view(response).substr(start, second - start));
}

} // namespace

void CompletionContext::validate() const {
    if (documents.empty()) throw InvariantViolation("completion context has no documents");
    if (question.empty()) throw EmptyQuestion("completion context has an empty question");
}

ReasoningChain complete_chain(const CompletionContext& ctx, ChatGateway& gateway,
                              const PromptTemplates& templates, int max_attempts) {
    ctx.validate();
    if (max_attempts < 1) throw InvariantViolation("max_attempts must be at least 1");
    const ChatRequest req = user_request(render_chain_prompt(templates.completion, ctx));
    for (int attempt = 1;; ++attempt) {
        const std::string response = gateway.chat(req);
        try {
            const auto triples = parse_response_chain(response);
            if (contains_mask_literal(triples)) {
                throw IncompleteChain("completion response still contains mask literals");
            }
            return completed_from_strings(triples);
        } catch (const IncompleteChain&) {
            if (attempt >= max_attempts) throw;
        } catch (const ParseError&) {
            if (attempt >= max_attempts) throw;
        } catch (const ChainInvariantViolation&) {
            if (attempt >= max_attempts) throw;
        }
    }
}

std::string generate_answer(const CompletionContext& ctx, ChatGateway& gateway,
                            const PromptTemplates& templates) {
    ctx.validate();
    if (ctx.chain.has_masks()) {
        throw InvariantViolation("answer generation needs a mask-free chain");
    }
    const ChatRequest req = user_request(render_chain_prompt(templates.answer, ctx));
    return extract_delimited_answer(gateway.chat(req));
}

UnifiedResult unified_reason(const CompletionContext& ctx, ChatGateway& gateway,
                             const PromptTemplates& templates, int max_attempts) {
    ctx.validate();
    if (max_attempts < 1) throw InvariantViolation("max_attempts must be at least 1");
    const ChatRequest req = user_request(render_chain_prompt(templates.unified, ctx));
    for (int attempt = 1;; ++attempt) {
        const std::string response = gateway.chat(req);
        try {
            const auto triples = parse_response_chain(response);
            if (contains_mask_literal(triples)) {
                throw IncompleteChain("unified response still contains mask literals");
            }
            UnifiedResult result{completed_from_strings(triples),
                                 extract_delimited_answer(response)};
            return result;
        } catch (const IncompleteChain&) {
            if (attempt >= max_attempts) throw;
        } catch (const ParseError&) {
            if (attempt >= max_attempts) throw;
        } catch (const ChainInvariantViolation&) {
            if (attempt >= max_attempts) throw;
        } catch (const AnswerDelimiterMissing&) {
            if (attempt >= max_attempts) throw;
        }
    }
}

KeyExtractOutcome key_extract_step(const KeyExtractState& state,
                                   const std::vector<Document>& documents, ChatGateway& gateway,
                                   const PromptTemplates& templates) {
    if (state.iteration >= state.max_iterations) {
        throw IterationLimitExceeded("key extraction used all " +
                                     std::to_string(state.max_iterations) + " iterations");
    }
    if (documents.empty()) throw InvariantViolation("key extraction needs documents");
    if (state.augmented_query.empty()) throw EmptyQuestion("key extraction query is empty");

    std::string prompt = substitute(templates.key_extract, "[question]", state.augmented_query);
    prompt = substitute(prompt, "[context]", render_key_extract_block(documents));
    const std::string response = gateway.chat(user_request(std::move(prompt)));

    const std::string verdict_marker = "So the answer is:";
    const auto verdict_at = response.find(verdict_marker);
    if (verdict_at == std::string::npos) {
        throw ParseError("key-extract response is missing \"So the answer is:\"");
    }
    std::string answer = trim(std::string_view(response).substr(verdict_at + verdict_marker.size()));
    // Tolerate a sentence-final period on the not-answerable verdict.
    if (answer == "False" || answer == "False.") {
        // Parse the "([i], \"sentence\")" tuple that precedes the verdict.
        const auto open = response.find('(');
        if (open == std::string::npos || open > verdict_at) {
            throw ParseError("key-extract response has no selection tuple");
        }
        std::size_t i = open + 1;
        auto skip_ws = [&] {
            while (i < response.size() && std::isspace(static_cast<unsigned char>(response[i])))
                ++i;
        };
        skip_ws();
        if (i >= response.size() || response[i] != '[') {
            throw ParseError("selection tuple does not start with a bracketed index");
        }
        ++i;
        int doc_index = 0;
        const auto [ptr, ec] =
            std::from_chars(response.data() + i, response.data() + response.size(), doc_index);
        if (ec != std::errc()) throw ParseError("selection tuple has no document index");
        i = static_cast<std::size_t>(ptr - response.data());
        if (i >= response.size() || response[i] != ']') {
            throw ParseError("selection tuple index is not closed");
        }
        ++i;
        skip_ws();
        if (i >= response.size() || response[i] != ',') {
            throw ParseError("selection tuple is missing the sentence");
        }
        ++i;
        skip_ws();
        if (i >= response.size() || response[i] != '"') {
            throw ParseError("selection tuple sentence is not quoted");
        }
        ++i;
        std::string sentence;
        bool closed = false;
        for (; i < response.size(); ++i) {
            const char c = response[i];
            if (c == '\\' && i + 1 < response.size()) {
                sentence += response[++i];
            } else if (c == '"') {
                closed = true;
                break;
            } else {
                sentence += c;
            }
        }
        if (!closed) throw ParseError("selection tuple sentence never closes");
        if (sentence.empty()) throw ParseError("selection tuple sentence is empty");
        if (doc_index < 1 || doc_index > static_cast<int>(documents.size())) {
            throw ParseError("selection tuple index " + std::to_string(doc_index) +
                             " is outside 1.." + std::to_string(documents.size()));
        }

        KeyExtractState next = state;
        next.iteration += 1;
        next.key_sentences.push_back(sentence);
        next.augmented_query += " " + sentence;
        return KeyExtractContinue{std::move(next)};
    }
    if (answer.empty()) throw ParseError("key-extract verdict is empty");
    return KeyExtractAnswer{std::move(answer)};
}

} // namespace cooprag
