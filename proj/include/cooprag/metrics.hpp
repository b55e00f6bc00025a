#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cooprag/core.hpp"

namespace cooprag {

// Fraction of gold ids covered by the top-k retrieved list.
double recall_at_k(const std::vector<std::string>& retrieved,
                   const std::set<std::string>& gold, int k);

// SQuAD-style: lowercase, strip punctuation, drop article tokens (a, an,
// the), collapse whitespace.
std::string normalize_answer(std::string_view s);

int exact_match(std::string_view pred, const std::vector<std::string>& golds);

// Best token-overlap F1 against any gold, on normalized whitespace tokens
// with multiplicity.
double token_f1(std::string_view pred, const std::vector<std::string>& golds);

std::vector<Document> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::vector<Document>& docs, const std::filesystem::path& path);
std::vector<QaExample> load_qa(const std::filesystem::path& path);
void save_qa(const std::vector<QaExample>& examples, const std::filesystem::path& path);

struct RunRecord {
    std::string example_id;
    std::string question;
    std::vector<std::string> retrieved; // ordered, no duplicates
    std::string answer;
    bool failed = false;
    std::string failure_stage;
    std::string failure_reason;
    std::vector<std::string> stages;
    std::map<std::string, double> timings_ms;
    std::string serialized_query;
    std::string masked_chain;
    std::string completed_chain;
    int llm_calls = 0;
    int key_extract_iterations = 0;
};

struct ExampleScore {
    std::string id;
    double recall_at_2 = 0.0;
    double recall_at_5 = 0.0;
    int em = 0;
    double f1 = 0.0;
};

struct Metrics {
    double recall_at_2 = 0.0;
    double recall_at_5 = 0.0;
    double em = 0.0;
    double f1 = 0.0;
    std::size_t examples = 0; // completed
    std::size_t failed = 0;
    std::vector<ExampleScore> per_example; // completed examples, record order
};

// Macro-averages the completed records against their dataset examples.
// Failed records only bump the failure count. Every record id must exist in
// the dataset.
Metrics evaluate_run(const std::vector<RunRecord>& records,
                     const std::vector<QaExample>& dataset);

} // namespace cooprag
