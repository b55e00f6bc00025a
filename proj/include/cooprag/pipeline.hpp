#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cooprag/chain.hpp"
#include "cooprag/core.hpp"
#include "cooprag/embedding.hpp"
#include "cooprag/gateway.hpp"
#include "cooprag/index.hpp"
#include "cooprag/loss.hpp"
#include "cooprag/metrics.hpp"
#include "cooprag/prompts.hpp"
#include "cooprag/rerank.hpp"
#include "cooprag/unrolling.hpp"

namespace cooprag {

// Answering modes: one retrieval pass feeding chain completion, or the
// iterative key-sentence loop with re-retrieval.
enum class AskMode { SingleStep, KeyExtract };

AskMode ask_mode_from_string(std::string_view name);
std::string_view to_string(AskMode m);

struct PipelineConfig {
    std::filesystem::path corpus_path;
    std::filesystem::path qa_path;
    std::filesystem::path store_path;
    std::filesystem::path index_path;
    std::filesystem::path prompts_dir;      // empty -> compiled-in templates
    std::filesystem::path encoder_fixtures; // non-empty selects the file-backed encoder
    std::filesystem::path gateway_fixtures; // non-empty selects the mock gateway
    std::string encoder_url;
    GatewayConfig gateway;

    int retrieve_n = kDefaultRetrieveN;
    RerankConfig rerank;
    double tau = kDefaultTau;
    AlphaMode alpha_mode = AlphaMode::SubQuestions;
    AskMode mode = AskMode::SingleStep;
    bool unified_reasoning = false;
    int unroll_attempts = kDefaultUnrollAttempts;
    int chain_attempts = kDefaultChainAttempts;
    int key_extract_max_iterations = kDefaultKeyExtractIterations;
    int max_seq_len = kDefaultMaxSeqLen;
    int eval_parallelism = 0; // 0 -> one worker per hardware thread

    void validate() const;
    static PipelineConfig from_json_file(const std::filesystem::path& path);
};

// Behavior-shaping settings as a JSON object with stable key order, echoed
// into reports. Filesystem paths stay out so reports compare equal across
// working directories.
std::string config_echo_json(const PipelineConfig& config);

// The text a document is embedded under: the title line, when there is one,
// ahead of the body.
std::string embedding_text(const Document& doc);

std::shared_ptr<EncoderProvider> make_encoder(const PipelineConfig& config);
std::shared_ptr<ChatGateway> make_gateway(const PipelineConfig& config);

struct IngestReport {
    std::size_t total = 0;
    std::size_t encoded = 0;
    std::vector<std::pair<std::string, std::string>> failures; // (doc id, reason)
};

// Per-document ingest progress: id, success, failure reason (empty on success).
using IngestProgress = std::function<void(const std::string&, bool, const std::string&)>;

// Encodes every corpus document and writes the embedding store. Per-document
// failures are collected and reported, not fatal; the store is written when
// at least one document encoded.
IngestReport run_ingest(const PipelineConfig& config, EncoderProvider& provider,
                        const IngestProgress& progress = {});

// Store -> flat index over final-layer CLS vectors, saved to config.index_path.
void run_build_index(const PipelineConfig& config);

struct AskResult {
    std::string answer;
    RunRecord record;
};

struct EvalOutput {
    Metrics metrics;
    std::vector<RunRecord> records; // dataset order
    std::string report_json;        // deterministic bytes for fixed config + fixtures
    std::string breakdown_jsonl;    // one line per example, dataset order
};

// Run record as one JSON line. Wall-clock timings are deliberately left out
// so identical runs serialize identically.
std::string run_record_json(const RunRecord& record);

std::string render_eval_report(const PipelineConfig& config, const Metrics& metrics,
                               const std::vector<RunRecord>& records);

class Pipeline {
public:
    // Loads prompts, corpus, store, and index up front, failing with the
    // stage name in the message before any gateway traffic. An injected
    // gateway or encoder (for tests) wins over the config-derived one.
    explicit Pipeline(PipelineConfig config, std::shared_ptr<ChatGateway> gateway = nullptr,
                      std::shared_ptr<EncoderProvider> encoder = nullptr);

    // Runs the staged flow for one question. Stage failures land in the
    // returned record (failed/failure_stage/failure_reason) instead of
    // throwing, so evaluation can keep going.
    AskResult ask(const std::string& question) const;

    EvalOutput eval(const std::vector<QaExample>& examples) const;

    const PipelineConfig& config() const { return config_; }
    const EmbeddingStore& store() const { return store_; }
    const FlatIndex& index() const { return index_; }
    const PromptTemplates& templates() const { return templates_; }
    ChatGateway& gateway() const { return *gateway_; }
    EncoderProvider& encoder() const { return *encoder_; }

private:
    std::vector<Document> top_documents(const std::vector<RankedDocument>& ranked,
                                        std::size_t limit) const;

    PipelineConfig config_;
    PromptTemplates templates_;
    std::map<std::string, Document> corpus_;
    EmbeddingStore store_;
    FlatIndex index_;
    std::shared_ptr<ChatGateway> gateway_;
    std::shared_ptr<EncoderProvider> encoder_;
};

} // namespace cooprag
