#include "cooprag/unrolling.hpp"

#include <cctype>
#include <charconv>

#include <nlohmann/json.hpp>

#include "cooprag/errors.hpp"

namespace cooprag {

std::string render_unroll_prompt(const std::string& question, const PromptTemplates& templates) {
    if (question.empty()) throw EmptyQuestion("cannot unroll an empty question");
    return substitute(templates.unroll, "[question]", question);
}

std::string_view extract_bracketed(std::string_view text, std::size_t from) {
    const auto open = text.find('[', from);
    if (open == std::string_view::npos) {
        throw ParseError("expected a bracketed list");
    }
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '[') {
            ++depth;
        } else if (c == ']') {
            --depth;
            if (depth == 0) return text.substr(open, i - open + 1);
        }
    }
    throw ParseError("bracketed list never closes");
}

namespace {

nlohmann::json parse_list_json(std::string_view bracketed) {
    try {
        auto parsed = nlohmann::json::parse(bracketed);
        if (!parsed.is_array()) throw ParseError("expected a list");
        return parsed;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed list: ") + e.what());
    }
}

} // namespace

std::vector<std::string> parse_string_list(std::string_view bracketed) {
    const auto parsed = parse_list_json(bracketed);
    std::vector<std::string> out;
    out.reserve(parsed.size());
    for (const auto& item : parsed) {
        if (!item.is_string()) throw ParseError("list item is not a quoted string");
        out.push_back(item.get<std::string>());
    }
    return out;
}

std::vector<TripleStrings> parse_triple_list(std::string_view bracketed) {
    const auto parsed = parse_list_json(bracketed);
    std::vector<TripleStrings> out;
    out.reserve(parsed.size());
    for (const auto& entry : parsed) {
        if (!entry.is_array() || entry.size() != 3) {
            throw ParseError("chain entry is not a three-element list");
        }
        TripleStrings t;
        for (std::size_t i = 0; i < 3; ++i) {
            if (!entry[i].is_string()) throw ParseError("chain entry element is not a string");
            t[i] = entry[i].get<std::string>();
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::string render_string_list(const std::vector<std::string>& items) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : items) arr.push_back(s);
    return arr.dump();
}

std::string render_triple_list(const std::vector<TripleStrings>& triples) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : triples) arr.push_back({t[0], t[1], t[2]});
    return arr.dump();
}

namespace {

EntitySlot slot_from_string(const std::string& s) {
    if (s == kUncertainMask) return EntitySlot::uncertain();
    if (s == kFillMask) return EntitySlot::fill();
    if (s.empty()) throw ParseError("empty chain entry element");
    return EntitySlot::text(s);
}

} // namespace

ReasoningChain masked_chain_from_strings(const std::vector<TripleStrings>& triples) {
    std::vector<Triple> out;
    out.reserve(triples.size());
    for (const auto& t : triples) {
        out.emplace_back(slot_from_string(t[0]), slot_from_string(t[1]), slot_from_string(t[2]));
    }
    return ReasoningChain::masked(std::move(out));
}

std::vector<TripleStrings> chain_to_strings(const ReasoningChain& chain) {
    std::vector<TripleStrings> out;
    out.reserve(chain.triples().size());
    for (const auto& t : chain.triples()) {
        out.push_back({t.head.render(), t.relation.render(), t.tail.render()});
    }
    return out;
}

std::string strip_subq_label(std::string_view sub_question) {
    std::string_view rest = sub_question;
    while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.front()))) {
        rest.remove_prefix(1);
    }
    if (rest.rfind("SUB_Q", 0) == 0) {
        std::size_t i = 5;
        while (i < rest.size() && std::isdigit(static_cast<unsigned char>(rest[i]))) ++i;
        if (i > 5 && i < rest.size() && rest[i] == ':') {
            rest.remove_prefix(i + 1);
            while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.front()))) {
                rest.remove_prefix(1);
            }
        }
    }
    return std::string(rest);
}

namespace {

std::size_t find_marker(const std::string& text, std::string_view marker) {
    const auto pos = text.find(marker);
    if (pos == std::string::npos) {
        throw ParseError("response is missing the \"" + std::string(marker) + "\" section");
    }
    return pos + marker.size();
}

int parse_hop_count(const std::string& text, std::size_t from) {
    std::size_t i = from;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    // Tolerate markdown emphasis around the number.
    while (i < text.size() && text[i] == '*') ++i;
    std::size_t end = i;
    while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
    int value = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + end, value);
    if (ec != std::errc() || ptr == text.data() + i) {
        throw ParseError("no integer after \"Hop Count:\"");
    }
    return value;
}

} // namespace

UnrolledQuestion parse_unroll_output(const std::string& text, const std::string& question) {
    if (text.empty()) throw ParseError("empty decomposition response");
    const auto hops_at = find_marker(text, "Hop Count:");
    const int hop_count = parse_hop_count(text, hops_at);

    const auto subs_at = find_marker(text, "Sub-questions:");
    auto sub_questions = parse_string_list(extract_bracketed(text, subs_at));
    for (auto& s : sub_questions) {
        s = strip_subq_label(s);
        if (s.empty()) throw ParseError("empty sub-question");
    }

    const auto chain_at = find_marker(text, "Triple Reasoning Chain:");
    auto chain = masked_chain_from_strings(parse_triple_list(extract_bracketed(text, chain_at)));

    return UnrolledQuestion(question, std::move(sub_questions), std::move(chain), hop_count,
                            text);
}

UnrolledQuestion unroll(const std::string& question, ChatGateway& gateway,
                        const PromptTemplates& templates, int max_attempts) {
    if (max_attempts < 1) throw InvariantViolation("max_attempts must be at least 1");
    ChatRequest req;
    req.messages.push_back({ChatRole::User, render_unroll_prompt(question, templates)});
    for (int attempt = 1;; ++attempt) {
        const std::string response = gateway.chat(req);
        try {
            return parse_unroll_output(response, question);
        } catch (const ParseError&) {
            if (attempt >= max_attempts) throw;
        } catch (const ChainInvariantViolation&) {
            if (attempt >= max_attempts) throw;
        }
    }
}

} // namespace cooprag
