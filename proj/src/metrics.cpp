#include "cooprag/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace cooprag {

double recall_at_k(const std::vector<std::string>& retrieved,
                   const std::set<std::string>& gold, int k) {
    if (gold.empty()) {
        throw EmptyGold("recall needs a non-empty gold set");
    }
    if (k < 1) {
        throw InvariantViolation("recall needs k >= 1");
    }
    std::size_t hits = 0;
    const std::size_t limit = std::min<std::size_t>(static_cast<std::size_t>(k), retrieved.size());
    for (std::size_t i = 0; i < limit; ++i) {
        if (gold.count(retrieved[i])) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

std::string normalize_answer(std::string_view s) {
    std::string lowered;
    lowered.reserve(s.size());
    for (char c : s) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::ispunct(uc)) {
            continue;
        }
        lowered.push_back(static_cast<char>(std::tolower(uc)));
    }
    std::istringstream words(lowered);
    std::string token;
    std::string out;
    while (words >> token) {
        if (token == "a" || token == "an" || token == "the") {
            continue;
        }
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += token;
    }
    return out;
}

namespace {

std::vector<std::string> normalized_tokens(std::string_view s) {
    std::istringstream words(normalize_answer(s));
    std::vector<std::string> tokens;
    std::string token;
    while (words >> token) {
        tokens.push_back(token);
    }
    return tokens;
}

double f1_of(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    if (pred.empty() && gold.empty()) {
        return 1.0;
    }
    if (pred.empty() || gold.empty()) {
        return 0.0;
    }
    std::unordered_map<std::string, int> counts;
    for (const auto& t : gold) {
        ++counts[t];
    }
    int common = 0;
    for (const auto& t : pred) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) {
        return 0.0;
    }
    const double precision = static_cast<double>(common) / pred.size();
    const double recall = static_cast<double>(common) / gold.size();
    return 2.0 * precision * recall / (precision + recall);
}

} // namespace

int exact_match(std::string_view pred, const std::vector<std::string>& golds) {
    if (golds.empty()) {
        throw EmptyGold("exact match needs at least one gold answer");
    }
    const std::string p = normalize_answer(pred);
    for (const auto& g : golds) {
        if (p == normalize_answer(g)) {
            return 1;
        }
    }
    return 0;
}

double token_f1(std::string_view pred, const std::vector<std::string>& golds) {
    if (golds.empty()) {
        throw EmptyGold("token F1 needs at least one gold answer");
    }
    const auto p = normalized_tokens(pred);
    double best = 0.0;
    for (const auto& g : golds) {
        best = std::max(best, f1_of(p, normalized_tokens(g)));
    }
    return best;
}

namespace {

// Shared JSONL loader: parses every line, collects all complaints, then
// throws one SchemaError naming each bad line.
template <typename Row>
std::vector<Row> load_jsonl(const std::filesystem::path& path,
                            Row (*parse)(const nlohmann::json&),
                            void (*check_batch)(std::vector<Row>&, std::vector<std::string>&)) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open: " + path.string());
    }
    std::vector<Row> rows;
    std::vector<std::string> problems;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            rows.push_back(parse(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (check_batch != nullptr) {
        check_batch(rows, problems);
    }
    if (!problems.empty()) {
        std::string msg = path.string() + " has " + std::to_string(problems.size()) +
                          " invalid record(s):";
        for (const auto& p : problems) {
            msg += "\n  " + p;
        }
        throw SchemaError(msg);
    }
    return rows;
}

Document parse_document(const nlohmann::json& j) {
    Document d;
    d.id = j.at("id").get<std::string>();
    d.title = j.at("title").get<std::string>();
    d.text = j.at("text").get<std::string>();
    if (d.id.empty()) {
        throw SchemaError("empty id");
    }
    if (d.text.empty()) {
        throw SchemaError("empty text");
    }
    return d;
}

void check_documents(std::vector<Document>& docs, std::vector<std::string>& problems) {
    std::set<std::string> seen;
    for (const auto& d : docs) {
        if (!seen.insert(d.id).second) {
            problems.push_back("duplicate doc id: " + d.id);
        }
    }
}

QaExample parse_example(const nlohmann::json& j) {
    QaExample e;
    e.id = j.at("id").get<std::string>();
    e.question = j.at("question").get<std::string>();
    e.gold_answers = j.at("answers").get<std::vector<std::string>>();
    e.gold_doc_ids = j.at("gold_doc_ids").get<std::vector<std::string>>();
    if (e.id.empty()) {
        throw SchemaError("empty id");
    }
    if (e.question.empty()) {
        throw SchemaError("empty question");
    }
    if (e.gold_answers.empty()) {
        throw SchemaError("answers must be non-empty");
    }
    if (e.gold_doc_ids.empty()) {
        throw SchemaError("gold_doc_ids must be non-empty");
    }
    return e;
}

} // namespace

std::vector<Document> load_corpus(const std::filesystem::path& path) {
    return load_jsonl<Document>(path, parse_document, check_documents);
}

void save_corpus(const std::vector<Document>& docs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    for (const auto& d : docs) {
        nlohmann::json j{{"id", d.id}, {"title", d.title}, {"text", d.text}};
        out << j.dump() << '\n';
    }
}

std::vector<QaExample> load_qa(const std::filesystem::path& path) {
    return load_jsonl<QaExample>(path, parse_example, nullptr);
}

void save_qa(const std::vector<QaExample>& examples, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    for (const auto& e : examples) {
        nlohmann::json j{{"id", e.id},
                         {"question", e.question},
                         {"answers", e.gold_answers},
                         {"gold_doc_ids", e.gold_doc_ids}};
        out << j.dump() << '\n';
    }
}

Metrics evaluate_run(const std::vector<RunRecord>& records,
                     const std::vector<QaExample>& dataset) {
    std::unordered_map<std::string, const QaExample*> by_id;
    for (const auto& e : dataset) {
        by_id[e.id] = &e;
    }

    Metrics m;
    for (const auto& r : records) {
        auto it = by_id.find(r.example_id);
        if (it == by_id.end()) {
            throw MissingExample("run record references unknown example id: " + r.example_id);
        }
        if (r.failed) {
            ++m.failed;
            continue;
        }
        const QaExample& ex = *it->second;
        const std::set<std::string> gold(ex.gold_doc_ids.begin(), ex.gold_doc_ids.end());
        ExampleScore s;
        s.id = r.example_id;
        s.recall_at_2 = recall_at_k(r.retrieved, gold, 2);
        s.recall_at_5 = recall_at_k(r.retrieved, gold, 5);
        s.em = exact_match(r.answer, ex.gold_answers);
        s.f1 = token_f1(r.answer, ex.gold_answers);
        m.recall_at_2 += s.recall_at_2;
        m.recall_at_5 += s.recall_at_5;
        m.em += s.em;
        m.f1 += s.f1;
        m.per_example.push_back(std::move(s));
        ++m.examples;
    }
    if (m.examples > 0) {
        const auto n = static_cast<double>(m.examples);
        m.recall_at_2 /= n;
        m.recall_at_5 /= n;
        m.em /= n;
        m.f1 /= n;
    }
    return m;
}

} // namespace cooprag
