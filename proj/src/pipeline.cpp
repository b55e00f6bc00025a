#include "cooprag/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <thread>
#include <type_traits>
#include <variant>

#include <nlohmann/json.hpp>

#include "cooprag/errors.hpp"

namespace cooprag {

using ordered_json = nlohmann::ordered_json;

AskMode ask_mode_from_string(std::string_view name) {
    if (name == "single_step") return AskMode::SingleStep;
    if (name == "key_extract") return AskMode::KeyExtract;
    throw SchemaError("unknown ask mode: " + std::string(name) +
                      " (expected single_step or key_extract)");
}

std::string_view to_string(AskMode m) {
    switch (m) {
    case AskMode::SingleStep: return "single_step";
    case AskMode::KeyExtract: return "key_extract";
    }
    throw InvariantViolation("unknown ask mode");
}

void PipelineConfig::validate() const {
    rerank.validate();
    if (retrieve_n < 1) throw InvariantViolation("retrieve_n must be at least 1");
    if (rerank.k > retrieve_n) {
        throw InvariantViolation("rerank k (" + std::to_string(rerank.k) +
                                 ") must not exceed retrieve_n (" + std::to_string(retrieve_n) +
                                 ")");
    }
    if (tau <= 0.0) throw NonPositiveTemperature("tau must be positive");
    if (unroll_attempts < 1) throw InvariantViolation("unroll_attempts must be at least 1");
    if (chain_attempts < 1) throw InvariantViolation("chain_attempts must be at least 1");
    if (key_extract_max_iterations < 1) {
        throw InvariantViolation("key_extract_max_iterations must be at least 1");
    }
    if (max_seq_len < 1) throw InvariantViolation("max_seq_len must be at least 1");
    if (eval_parallelism < 0) throw InvariantViolation("eval_parallelism must not be negative");
}

namespace {

void load_gateway_section(const nlohmann::json& section, GatewayConfig& out) {
    for (const auto& [key, value] : section.items()) {
        if (key == "base_url") {
            out.base_url = value.get<std::string>();
        } else if (key == "model") {
            out.model = value.get<std::string>();
        } else if (key == "api_key_env") {
            out.api_key_env = value.get<std::string>();
        } else if (key == "timeout_ms") {
            out.timeout_ms = value.get<int>();
        } else if (key == "max_retries") {
            out.max_retries = value.get<int>();
        } else if (key == "max_in_flight") {
            out.max_in_flight = value.get<int>();
        } else if (key == "retry_base_delay_ms") {
            out.retry_base_delay_ms = value.get<int>();
        } else {
            throw SchemaError("unknown gateway config key: " + key);
        }
    }
}

void load_rerank_section(const nlohmann::json& section, RerankConfig& out) {
    for (const auto& [key, value] : section.items()) {
        if (key == "strategy") {
            out.strategy = rerank_strategy_from_string(value.get<std::string>());
        } else if (key == "bucket_count") {
            out.bucket_count = value.get<int>();
        } else if (key == "seed") {
            out.seed = value.get<std::uint64_t>();
        } else if (key == "k") {
            out.k = value.get<int>();
        } else {
            throw SchemaError("unknown rerank config key: " + key);
        }
    }
}

} // namespace

PipelineConfig PipelineConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    nlohmann::json parsed;
    try {
        in >> parsed;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!parsed.is_object()) throw SchemaError("config root must be a JSON object");

    PipelineConfig c;
    try {
        for (const auto& [key, value] : parsed.items()) {
            if (key == "corpus") {
                c.corpus_path = value.get<std::string>();
            } else if (key == "qa") {
                c.qa_path = value.get<std::string>();
            } else if (key == "store") {
                c.store_path = value.get<std::string>();
            } else if (key == "index") {
                c.index_path = value.get<std::string>();
            } else if (key == "prompts_dir") {
                c.prompts_dir = value.get<std::string>();
            } else if (key == "encoder_fixtures") {
                c.encoder_fixtures = value.get<std::string>();
            } else if (key == "encoder_url") {
                c.encoder_url = value.get<std::string>();
            } else if (key == "gateway_fixtures") {
                c.gateway_fixtures = value.get<std::string>();
            } else if (key == "gateway") {
                load_gateway_section(value, c.gateway);
            } else if (key == "retrieve_n") {
                c.retrieve_n = value.get<int>();
            } else if (key == "rerank") {
                load_rerank_section(value, c.rerank);
            } else if (key == "tau") {
                c.tau = value.get<double>();
            } else if (key == "alpha_mode") {
                c.alpha_mode = alpha_mode_from_string(value.get<std::string>());
            } else if (key == "mode") {
                c.mode = ask_mode_from_string(value.get<std::string>());
            } else if (key == "unified_reasoning") {
                c.unified_reasoning = value.get<bool>();
            } else if (key == "unroll_attempts") {
                c.unroll_attempts = value.get<int>();
            } else if (key == "chain_attempts") {
                c.chain_attempts = value.get<int>();
            } else if (key == "key_extract_max_iterations") {
                c.key_extract_max_iterations = value.get<int>();
            } else if (key == "max_seq_len") {
                c.max_seq_len = value.get<int>();
            } else if (key == "eval_parallelism") {
                c.eval_parallelism = value.get<int>();
            } else {
                throw SchemaError("unknown config key: " + key);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("config " + path.string() + ": " + e.what());
    }
    c.validate();
    return c;
}

std::string config_echo_json(const PipelineConfig& config) {
    // eval_parallelism is omitted on purpose: it cannot change results, and
    // echoing it would make otherwise-identical reports differ.
    ordered_json echo;
    echo["retrieve_n"] = config.retrieve_n;
    echo["rerank"] = {{"strategy", std::string(to_string(config.rerank.strategy))},
                      {"bucket_count", config.rerank.bucket_count},
                      {"seed", config.rerank.seed},
                      {"k", config.rerank.k}};
    echo["tau"] = config.tau;
    echo["alpha_mode"] = std::string(to_string(config.alpha_mode));
    echo["mode"] = std::string(to_string(config.mode));
    echo["unified_reasoning"] = config.unified_reasoning;
    echo["unroll_attempts"] = config.unroll_attempts;
    echo["chain_attempts"] = config.chain_attempts;
    echo["key_extract_max_iterations"] = config.key_extract_max_iterations;
    echo["max_seq_len"] = config.max_seq_len;
    return echo.dump();
}

std::string embedding_text(const Document& doc) {
    if (doc.title.empty()) return doc.text;
    return doc.title + "\n" + doc.text;
}

std::shared_ptr<EncoderProvider> make_encoder(const PipelineConfig& config) {
    if (!config.encoder_fixtures.empty()) {
        return std::make_shared<FixtureEncoderProvider>(config.encoder_fixtures);
    }
    if (!config.encoder_url.empty()) {
        HttpEncoderConfig http;
        http.base_url = config.encoder_url;
        http.max_in_flight = config.gateway.max_in_flight;
        return std::make_shared<HttpEncoderProvider>(http);
    }
    throw ProviderUnavailable("no encoder configured: set encoder_fixtures or encoder_url");
}

std::shared_ptr<ChatGateway> make_gateway(const PipelineConfig& config) {
    if (!config.gateway_fixtures.empty()) {
        return std::make_shared<MockChatGateway>(config.gateway_fixtures);
    }
    if (!config.gateway.base_url.empty()) {
        return std::make_shared<HttpChatGateway>(config.gateway);
    }
    throw GatewayError("no chat backend configured: set gateway_fixtures or gateway.base_url");
}

IngestReport run_ingest(const PipelineConfig& config, EncoderProvider& provider,
                        const IngestProgress& progress) {
    const auto docs = load_corpus(config.corpus_path);
    IngestReport report;
    report.total = docs.size();

    StoreMetadata meta;
    meta.encoder_name = provider.name();
    meta.max_seq_len = config.max_seq_len;
    EmbeddingStore store(meta);
    for (const auto& doc : docs) {
        try {
            store.insert(doc.id, encode(embedding_text(doc), provider, config.max_seq_len));
            ++report.encoded;
            if (progress) progress(doc.id, true, "");
        } catch (const Error& e) {
            report.failures.emplace_back(doc.id, e.what());
            if (progress) progress(doc.id, false, e.what());
        }
    }
    if (report.encoded > 0) save_store(store, config.store_path);
    return report;
}

void run_build_index(const PipelineConfig& config) {
    FlatIndex::build(load_store(config.store_path)).save(config.index_path);
}

namespace {

ordered_json record_to_json(const RunRecord& rec) {
    ordered_json j;
    j["example_id"] = rec.example_id;
    j["question"] = rec.question;
    j["serialized_query"] = rec.serialized_query;
    j["masked_chain"] = rec.masked_chain;
    j["completed_chain"] = rec.completed_chain;
    j["retrieved"] = rec.retrieved;
    j["answer"] = rec.answer;
    j["failed"] = rec.failed;
    j["failure_stage"] = rec.failure_stage;
    j["failure_reason"] = rec.failure_reason;
    j["stages"] = rec.stages;
    j["llm_calls"] = rec.llm_calls;
    j["key_extract_iterations"] = rec.key_extract_iterations;
    return j;
}

} // namespace

std::string run_record_json(const RunRecord& record) { return record_to_json(record).dump(); }

std::string render_eval_report(const PipelineConfig& config, const Metrics& metrics,
                               const std::vector<RunRecord>& records) {
    ordered_json report;
    report["report"] = "eval";
    report["config"] = ordered_json::parse(config_echo_json(config));
    report["counts"] = {{"examples", records.size()},
                       {"completed", metrics.examples},
                       {"failed", metrics.failed}};
    report["metrics"] = {{"recall_at_2", metrics.recall_at_2},
                        {"recall_at_5", metrics.recall_at_5},
                        {"em", metrics.em},
                        {"f1", metrics.f1}};
    auto& failures = report["failures"] = ordered_json::array();
    for (const auto& rec : records) {
        if (!rec.failed) continue;
        failures.push_back({{"id", rec.example_id},
                            {"stage", rec.failure_stage},
                            {"reason", rec.failure_reason}});
    }
    // External reference result, carried for context display only; runs at
    // this scale are not expected to approach it.
    report["reference"] = {{"system", "CoopRAG (GPT-4o-mini)"},
                          {"dataset", "HotpotQA"},
                          {"recall_at_2", 88.8}};
    return report.dump(2) + "\n";
}

namespace {

// Per-question call counter layered over the shared gateway. Each ask() has
// its own instance, so the count needs no synchronization.
class CountingGateway : public ChatGateway {
public:
    explicit CountingGateway(ChatGateway& inner) : inner_(inner) {}

    std::string chat(const ChatRequest& req) override {
        ++calls_;
        return inner_.chat(req);
    }

    int calls() const { return calls_; }

private:
    ChatGateway& inner_;
    int calls_ = 0;
};

[[noreturn]] void rethrow_with_stage(const std::string& stage) {
    try {
        throw;
    } catch (const TruncatedFile& e) {
        throw TruncatedFile(stage + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(stage + ": " + e.what());
    } catch (const SchemaError& e) {
        throw SchemaError(stage + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(stage + ": " + e.what());
    } catch (const Error& e) {
        throw Error(stage + ": " + e.what());
    }
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

} // namespace

Pipeline::Pipeline(PipelineConfig config, std::shared_ptr<ChatGateway> gateway,
                   std::shared_ptr<EncoderProvider> encoder)
    : config_(std::move(config)) {
    config_.validate();
    try {
        templates_ = config_.prompts_dir.empty() ? PromptTemplates::builtin()
                                                 : PromptTemplates::load_dir(config_.prompts_dir);
        templates_.validate();
    } catch (const Error&) {
        rethrow_with_stage("load_prompts");
    }
    try {
        for (auto& doc : load_corpus(config_.corpus_path)) {
            auto id = doc.id;
            corpus_.emplace(std::move(id), std::move(doc));
        }
    } catch (const Error&) {
        rethrow_with_stage("load_corpus");
    }
    try {
        store_ = load_store(config_.store_path);
    } catch (const Error&) {
        rethrow_with_stage("load_store");
    }
    try {
        index_ = FlatIndex::load(config_.index_path);
    } catch (const Error&) {
        rethrow_with_stage("load_index");
    }
    gateway_ = gateway ? std::move(gateway) : make_gateway(config_);
    encoder_ = encoder ? std::move(encoder) : make_encoder(config_);
}

std::vector<Document> Pipeline::top_documents(const std::vector<RankedDocument>& ranked,
                                              std::size_t limit) const {
    std::vector<Document> docs;
    docs.reserve(std::min(limit, ranked.size()));
    for (const auto& r : ranked) {
        if (docs.size() >= limit) break;
        const auto it = corpus_.find(r.doc_id);
        if (it == corpus_.end()) {
            throw UnknownDocId("retrieved doc " + r.doc_id + " is not in the corpus");
        }
        docs.push_back(it->second);
    }
    return docs;
}

AskResult Pipeline::ask(const std::string& question) const {
    RunRecord rec;
    rec.question = question;
    CountingGateway counting(*gateway_);
    std::string stage = "start";

    auto run_stage = [&](const char* name, auto&& fn) -> decltype(auto) {
        stage = name;
        rec.stages.push_back(name);
        const auto start = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<std::invoke_result_t<decltype(fn)&>>) {
            fn();
            rec.timings_ms[name] += elapsed_ms(start);
        } else {
            auto value = fn();
            rec.timings_ms[name] += elapsed_ms(start);
            return value;
        }
    };

    try {
        auto u = run_stage("unroll", [&] {
            return unroll(question, counting, templates_, config_.unroll_attempts);
        });
        rec.masked_chain = render_triple_list(chain_to_strings(u.chain()));
        if (u.sub_questions().empty()) {
            // Accepted, but unusual enough to surface when debugging.
            std::cerr << "note: decomposition produced zero sub-questions for: " << question
                      << "\n";
        }

        const auto query = run_stage("serialize", [&] { return serialize_unrolled(u); });
        rec.serialized_query = query;

        auto qe = run_stage("encode",
                            [&] { return encode(query, *encoder_, config_.max_seq_len); });

        auto hits = run_stage("search", [&] {
            return index_.search(qe.cls(qe.layers()), config_.retrieve_n);
        });

        // Key extraction shows the model a deeper slate than the final
        // answer context uses.
        RerankConfig rr = config_.rerank;
        const int prompt_docs = config_.mode == AskMode::KeyExtract
                                    ? std::max(rr.k, kKeyExtractDocCount)
                                    : rr.k;
        rr.k = prompt_docs;

        struct RerankOut {
            std::vector<RankedDocument> ranked;
            std::vector<Document> docs;
        };
        auto rerank_hits = [&](const std::vector<RankedDocument>& found) {
            std::vector<std::string> ids;
            ids.reserve(found.size());
            for (const auto& h : found) ids.push_back(h.doc_id);
            auto ranked = rerank(ids, qe, store_, rr);
            auto docs = top_documents(ranked, static_cast<std::size_t>(prompt_docs));
            return RerankOut{std::move(ranked), std::move(docs)};
        };
        auto record_retrieved = [&](const std::vector<RankedDocument>& ranked) {
            rec.retrieved.clear();
            for (const auto& r : ranked) {
                if (static_cast<int>(rec.retrieved.size()) >= config_.rerank.k) break;
                rec.retrieved.push_back(r.doc_id);
            }
        };

        auto out = run_stage("rerank", [&] { return rerank_hits(hits); });
        record_retrieved(out.ranked);

        auto reason_and_answer = [&](const std::vector<Document>& docs) {
            CompletionContext ctx{docs, question, u.sub_questions(), u.chain()};
            if (config_.unified_reasoning) {
                auto res = run_stage("unified_reason", [&] {
                    return unified_reason(ctx, counting, templates_, config_.chain_attempts);
                });
                rec.completed_chain = render_triple_list(chain_to_strings(res.chain));
                return res.answer;
            }
            auto completed = run_stage("complete_chain", [&] {
                return complete_chain(ctx, counting, templates_, config_.chain_attempts);
            });
            rec.completed_chain = render_triple_list(chain_to_strings(completed));
            CompletionContext answer_ctx{docs, question, u.sub_questions(), completed};
            return run_stage("generate_answer", [&] {
                return generate_answer(answer_ctx, counting, templates_);
            });
        };

        std::string answer;
        if (config_.mode == AskMode::SingleStep) {
            answer = reason_and_answer(out.docs);
        } else {
            KeyExtractState state;
            state.max_iterations = config_.key_extract_max_iterations;
            state.augmented_query = query;
            bool answered = false;
            while (true) {
                auto outcome = run_stage("key_extract", [&] {
                    return key_extract_step(state, out.docs, counting, templates_);
                });
                if (const auto* found = std::get_if<KeyExtractAnswer>(&outcome)) {
                    answer = found->answer;
                    answered = true;
                    break;
                }
                state = std::get<KeyExtractContinue>(outcome).state;
                rec.key_extract_iterations = state.iteration;
                if (state.iteration >= state.max_iterations) break;
                qe = run_stage("encode", [&] {
                    return encode(state.augmented_query, *encoder_, config_.max_seq_len);
                });
                hits = run_stage("search", [&] {
                    return index_.search(qe.cls(qe.layers()), config_.retrieve_n);
                });
                out = run_stage("rerank", [&] { return rerank_hits(hits); });
                record_retrieved(out.ranked);
            }
            if (!answered) {
                // Out of iterations: answer from the last retrieved context.
                answer = reason_and_answer(
                    top_documents(out.ranked, static_cast<std::size_t>(config_.rerank.k)));
            }
        }

        rec.answer = answer;
        rec.llm_calls = counting.calls();
        return {std::move(answer), std::move(rec)};
    } catch (const std::exception& e) {
        rec.failed = true;
        rec.failure_stage = stage;
        rec.failure_reason = e.what();
        rec.llm_calls = counting.calls();
        return {"", std::move(rec)};
    }
}

EvalOutput Pipeline::eval(const std::vector<QaExample>& examples) const {
    std::vector<RunRecord> records(examples.size());

    int workers = config_.eval_parallelism > 0
                      ? config_.eval_parallelism
                      : static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    workers = static_cast<int>(
        std::min(static_cast<std::size_t>(workers), examples.size()));

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= examples.size()) break;
            try {
                auto result = ask(examples[i].question);
                result.record.example_id = examples[i].id;
                records[i] = std::move(result.record);
            } catch (const std::exception& e) {
                RunRecord rec;
                rec.example_id = examples[i].id;
                rec.question = examples[i].question;
                rec.failed = true;
                rec.failure_stage = "internal";
                rec.failure_reason = e.what();
                records[i] = std::move(rec);
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    EvalOutput out;
    out.metrics = evaluate_run(records, examples);
    out.report_json = render_eval_report(config_, out.metrics, records);

    std::map<std::string, const ExampleScore*> scores;
    for (const auto& s : out.metrics.per_example) scores[s.id] = &s;
    std::string breakdown;
    for (const auto& rec : records) {
        ordered_json line = record_to_json(rec);
        if (const auto it = scores.find(rec.example_id); it != scores.end()) {
            line["scores"] = {{"recall_at_2", it->second->recall_at_2},
                             {"recall_at_5", it->second->recall_at_5},
                             {"em", it->second->em},
                             {"f1", it->second->f1}};
        }
        breakdown += line.dump();
        breakdown += '\n';
    }
    out.breakdown_jsonl = std::move(breakdown);
    out.records = std::move(records);
    return out;
}

} // namespace cooprag
