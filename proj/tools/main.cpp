#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cooprag/pipeline.hpp"

namespace {

using namespace cooprag;

// Every subcommand accepts the same flag surface; unset flags leave the
// config-file (or default) values untouched.
struct Flags {
    std::string config;
    std::string corpus;
    std::string qa;
    std::string store;
    std::string index;
    std::string prompts_dir;
    std::string encoder_fixtures;
    std::string encoder_url;
    std::string gateway_fixtures;
    std::string gateway_url;
    std::string gateway_model;
    std::string api_key_env;
    int retrieve_n = kDefaultRetrieveN;
    std::string strategy;
    int buckets = 4;
    std::uint64_t seed = 42;
    int k = 5;
    double tau = kDefaultTau;
    std::string alpha_mode;
    std::string mode;
    bool unified = false;
    int max_seq_len = kDefaultMaxSeqLen;
    int parallelism = 0;
    int unroll_attempts = kDefaultUnrollAttempts;
    int chain_attempts = kDefaultChainAttempts;
    int key_iters = kDefaultKeyExtractIterations;
};

void add_common_options(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON config file; flags override its fields");
    cmd->add_option("--corpus", f.corpus, "corpus JSONL path");
    cmd->add_option("--qa", f.qa, "QA dataset JSONL path");
    cmd->add_option("--store", f.store, "embedding store path");
    cmd->add_option("--index", f.index, "flat index path");
    cmd->add_option("--prompts-dir", f.prompts_dir, "directory overriding built-in prompts");
    cmd->add_option("--encoder-fixtures", f.encoder_fixtures,
                    "directory of precomputed embedding fixtures");
    cmd->add_option("--encoder-url", f.encoder_url, "embedding service base URL");
    cmd->add_option("--gateway-fixtures", f.gateway_fixtures,
                    "directory of canned chat responses (mock gateway)");
    cmd->add_option("--gateway-url", f.gateway_url, "chat backend base URL");
    cmd->add_option("--gateway-model", f.gateway_model, "chat model name");
    cmd->add_option("--api-key-env", f.api_key_env, "env var holding the chat API key");
    cmd->add_option("-n,--retrieve-n", f.retrieve_n, "first-stage retrieval depth");
    cmd->add_option("--rerank-strategy", f.strategy,
                    "naive-gap | gap-weighted | token-contrast | plain-maxsim");
    cmd->add_option("-B,--buckets", f.buckets, "candidate-layer bucket count");
    cmd->add_option("--seed", f.seed, "candidate-layer sampling seed");
    cmd->add_option("-k,--top-k", f.k, "documents kept after reranking");
    cmd->add_option("--tau", f.tau, "InfoNCE temperature");
    cmd->add_option("--alpha-mode", f.alpha_mode, "sub_questions | chain_length");
    cmd->add_option("--mode", f.mode, "single_step | key_extract");
    cmd->add_flag("--unified", f.unified, "one reasoning call instead of complete+answer");
    cmd->add_option("--max-seq-len", f.max_seq_len, "token truncation for encoded text");
    cmd->add_option("--parallelism", f.parallelism, "eval workers (0 = hardware threads)");
    cmd->add_option("--unroll-attempts", f.unroll_attempts, "parse retries for decomposition");
    cmd->add_option("--chain-attempts", f.chain_attempts, "parse retries for chain reasoning");
    cmd->add_option("--key-extract-iterations", f.key_iters, "key-extract round limit");
}

PipelineConfig build_config(const CLI::App* cmd, const Flags& f) {
    PipelineConfig c;
    if (!f.config.empty()) c = PipelineConfig::from_json_file(f.config);
    const auto set = [&](const std::string& flag) { return cmd->count(flag) > 0; };
    if (set("--corpus")) c.corpus_path = f.corpus;
    if (set("--qa")) c.qa_path = f.qa;
    if (set("--store")) c.store_path = f.store;
    if (set("--index")) c.index_path = f.index;
    if (set("--prompts-dir")) c.prompts_dir = f.prompts_dir;
    if (set("--encoder-fixtures")) c.encoder_fixtures = f.encoder_fixtures;
    if (set("--encoder-url")) c.encoder_url = f.encoder_url;
    if (set("--gateway-fixtures")) c.gateway_fixtures = f.gateway_fixtures;
    if (set("--gateway-url")) c.gateway.base_url = f.gateway_url;
    if (set("--gateway-model")) c.gateway.model = f.gateway_model;
    if (set("--api-key-env")) c.gateway.api_key_env = f.api_key_env;
    if (set("--retrieve-n")) c.retrieve_n = f.retrieve_n;
    if (set("--rerank-strategy")) c.rerank.strategy = rerank_strategy_from_string(f.strategy);
    if (set("--buckets")) c.rerank.bucket_count = f.buckets;
    if (set("--seed")) c.rerank.seed = f.seed;
    if (set("--top-k")) c.rerank.k = f.k;
    if (set("--tau")) c.tau = f.tau;
    if (set("--alpha-mode")) c.alpha_mode = alpha_mode_from_string(f.alpha_mode);
    if (set("--mode")) c.mode = ask_mode_from_string(f.mode);
    if (set("--unified")) c.unified_reasoning = f.unified;
    if (set("--max-seq-len")) c.max_seq_len = f.max_seq_len;
    if (set("--parallelism")) c.eval_parallelism = f.parallelism;
    if (set("--unroll-attempts")) c.unroll_attempts = f.unroll_attempts;
    if (set("--chain-attempts")) c.chain_attempts = f.chain_attempts;
    if (set("--key-extract-iterations")) c.key_extract_max_iterations = f.key_iters;
    c.validate();
    return c;
}

int cmd_ingest(const PipelineConfig& config) {
    auto provider = make_encoder(config);
    const auto report =
        run_ingest(config, *provider, [](const std::string& id, bool ok, const std::string& why) {
            if (ok) {
                std::cerr << "encoded " << id << "\n";
            } else {
                std::cerr << "failed " << id << ": " << why << "\n";
            }
        });
    nlohmann::ordered_json summary;
    summary["total"] = report.total;
    summary["encoded"] = report.encoded;
    auto& failed = summary["failed"] = nlohmann::ordered_json::array();
    for (const auto& [id, reason] : report.failures) {
        failed.push_back({{"id", id}, {"reason", reason}});
    }
    std::cout << summary.dump() << "\n";
    if (report.encoded == 0) return 1;
    return report.failures.empty() ? 0 : 2;
}

int cmd_build_index(const PipelineConfig& config) {
    run_build_index(config);
    const auto index = FlatIndex::load(config.index_path);
    std::cerr << "indexed " << index.size() << " documents, dim " << index.dim() << "\n";
    return 0;
}

int cmd_ask(const PipelineConfig& config, const std::string& question,
            const std::string& record_path) {
    Pipeline pipeline(config);
    const auto result = pipeline.ask(question);
    if (!record_path.empty()) {
        std::ofstream out(record_path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write run record: " + record_path);
        out << run_record_json(result.record) << "\n";
    }
    for (const auto& [stage, ms] : result.record.timings_ms) {
        std::cerr << stage << " " << ms << " ms\n";
    }
    if (result.record.failed) {
        std::cerr << "stage " << result.record.failure_stage
                  << " failed: " << result.record.failure_reason << "\n";
        return 1;
    }
    std::cout << result.answer << "\n";
    return 0;
}

int cmd_eval(const PipelineConfig& config, const std::string& report_path,
             const std::string& breakdown_path) {
    Pipeline pipeline(config);
    const auto examples = load_qa(config.qa_path);
    const auto output = pipeline.eval(examples);

    std::ofstream report(report_path, std::ios::binary | std::ios::trunc);
    if (!report) throw IoError("cannot write report: " + report_path);
    report << output.report_json;
    std::ofstream breakdown(breakdown_path, std::ios::binary | std::ios::trunc);
    if (!breakdown) throw IoError("cannot write breakdown: " + breakdown_path);
    breakdown << output.breakdown_jsonl;

    const auto& m = output.metrics;
    std::cout << "examples=" << examples.size() << " completed=" << m.examples
              << " failed=" << m.failed << " recall@2=" << m.recall_at_2
              << " recall@5=" << m.recall_at_5 << " em=" << m.em << " f1=" << m.f1 << "\n";
    return m.failed == 0 ? 0 : 2;
}

int cmd_rerank_bench(const PipelineConfig& config, const std::string& query_text,
                     std::vector<std::string> candidates) {
    const auto store = load_store(config.store_path);
    auto provider = make_encoder(config);
    const auto query = encode(query_text, *provider, config.max_seq_len);
    if (candidates.empty()) {
        for (const auto& [id, emb] : store.docs()) candidates.push_back(id);
    }
    RerankConfig rr = config.rerank;
    rr.k = static_cast<int>(candidates.size()); // score the whole slate
    const auto ranked = rerank(candidates, query, store, rr);
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& r : ranked) {
        out.push_back({{"rank", r.rank}, {"doc_id", r.doc_id}, {"score", r.score}});
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

// Largest element-wise gap between analytic and central-difference gradients,
// relative to the gradient's own magnitude.
double fd_max_rel_error(const BatchSpec& batch, const ScoreMatrix& scores, double h) {
    const ScoreMatrix grad = batch_loss_grad(batch, scores);
    double grad_peak = 0.0;
    for (const double g : grad.values) grad_peak = std::max(grad_peak, std::fabs(g));

    ScoreMatrix probe = scores;
    double worst = 0.0;
    for (std::size_t i = 0; i < scores.rows; ++i) {
        for (std::size_t j = 0; j < scores.cols; ++j) {
            const double original = probe.at(i, j);
            probe.at(i, j) = original + h;
            const double up = batch_loss(batch, probe);
            probe.at(i, j) = original - h;
            const double down = batch_loss(batch, probe);
            probe.at(i, j) = original;
            const double fd = (up - down) / (2.0 * h);
            worst = std::max(worst, std::fabs(fd - grad.at(i, j)));
        }
    }
    return worst / std::max(grad_peak, 1e-12);
}

int cmd_loss_check(const PipelineConfig& config, const std::string& batch_path, int random_batches,
                   int max_b, std::uint64_t seed) {
    const double tolerance = 1e-4;
    const double h = 1e-5;
    double worst = 0.0;
    int checked = 0;

    if (!batch_path.empty()) {
        const auto fixture = load_batch_fixture(batch_path);
        worst = fd_max_rel_error(fixture.batch, fixture.scores, h);
        checked = 1;
        std::cerr << "fixture loss " << batch_loss(fixture.batch, fixture.scores) << "\n";
    } else {
        std::mt19937_64 rng(seed);
        // 53-bit mantissa draw; avoids distribution objects so results match
        // across standard libraries.
        const auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
        for (int t = 0; t < random_batches; ++t) {
            const std::size_t b = 1 + rng() % static_cast<std::uint64_t>(max_b);
            BatchSpec batch;
            batch.tau = config.tau;
            batch.alpha_mode = config.alpha_mode;
            for (std::size_t i = 0; i < b; ++i) {
                QuestionDifficulty q;
                q.sub_question_count = rng() % 7;
                q.chain_length = 1 + rng() % 7;
                batch.questions.push_back(q);
            }
            ScoreMatrix scores = ScoreMatrix::zeros(b, 2 * b);
            for (auto& v : scores.values) v = 2.0 * uniform() - 1.0;
            worst = std::max(worst, fd_max_rel_error(batch, scores, h));
            ++checked;
        }
    }

    nlohmann::ordered_json out;
    out["batches"] = checked;
    out["max_rel_error"] = worst;
    out["tolerance"] = tolerance;
    out["ok"] = worst < tolerance;
    std::cout << out.dump() << "\n";
    return worst < tolerance ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retrieval-augmented multi-hop QA pipeline"};
    app.require_subcommand(1);

    Flags flags;
    std::function<int()> action;

    auto* ingest = app.add_subcommand("ingest", "encode a corpus into an embedding store");
    add_common_options(ingest, flags);
    ingest->callback([&] { action = [&, ingest] { return cmd_ingest(build_config(ingest, flags)); }; });

    auto* build_index = app.add_subcommand("build-index", "build the flat index from a store");
    add_common_options(build_index, flags);
    build_index->callback(
        [&] { action = [&, build_index] { return cmd_build_index(build_config(build_index, flags)); }; });

    std::string question;
    std::string record_path;
    auto* ask = app.add_subcommand("ask", "answer one question end to end");
    add_common_options(ask, flags);
    ask->add_option("question", question, "the question to answer")->required();
    ask->add_option("--record", record_path, "write the run record JSON here");
    ask->callback([&] {
        action = [&, ask] { return cmd_ask(build_config(ask, flags), question, record_path); };
    });

    std::string report_path = "eval_report.json";
    std::string breakdown_path = "eval_breakdown.jsonl";
    auto* eval = app.add_subcommand("eval", "run the QA dataset and write a metrics report");
    add_common_options(eval, flags);
    eval->add_option("--report", report_path, "report JSON output path");
    eval->add_option("--breakdown", breakdown_path, "per-example JSONL output path");
    eval->callback([&] {
        action = [&, eval] {
            return cmd_eval(build_config(eval, flags), report_path, breakdown_path);
        };
    });

    std::string query_text;
    std::vector<std::string> candidates;
    auto* bench = app.add_subcommand("rerank-bench", "score a candidate list offline");
    add_common_options(bench, flags);
    bench->add_option("--query-text", query_text, "query text to encode and rerank against")
        ->required();
    bench->add_option("--candidates", candidates, "doc ids to score (default: whole store)")
        ->delimiter(',');
    bench->callback([&] {
        action = [&, bench] {
            return cmd_rerank_bench(build_config(bench, flags), query_text, candidates);
        };
    });

    std::string batch_path;
    int random_batches = 50;
    int max_b = 8;
    std::uint64_t check_seed = 7;
    auto* loss_check = app.add_subcommand("loss-check", "verify loss gradients numerically");
    add_common_options(loss_check, flags);
    loss_check->add_option("--batch", batch_path, "batch fixture JSON (default: random batches)");
    loss_check->add_option("--random-batches", random_batches, "number of random batches");
    loss_check->add_option("--max-b", max_b, "largest random batch size");
    loss_check->add_option("--check-seed", check_seed, "random batch seed");
    loss_check->callback([&] {
        action = [&, loss_check] {
            return cmd_loss_check(build_config(loss_check, flags), batch_path, random_batches,
                                  max_b, check_seed);
        };
    });

    CLI11_PARSE(app, argc, argv);

    try {
        return action();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
