#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cooprag/pipeline.hpp"

#include "support/e2e.hpp"

using namespace cooprag;

TEST_SUITE("pipeline") {

TEST_CASE("ask mode names round trip") {
    CHECK(ask_mode_from_string("single_step") == AskMode::SingleStep);
    CHECK(ask_mode_from_string("key_extract") == AskMode::KeyExtract);
    CHECK(to_string(AskMode::SingleStep) == "single_step");
    CHECK(to_string(AskMode::KeyExtract) == "key_extract");
    CHECK_THROWS_AS(ask_mode_from_string("colbert"), SchemaError);
}

TEST_CASE("config validation") {
    PipelineConfig c;
    CHECK_NOTHROW(c.validate());

    SUBCASE("rerank depth cannot exceed retrieval depth") {
        c.retrieve_n = 3;
        c.rerank.k = 5;
        CHECK_THROWS_AS(c.validate(), InvariantViolation);
    }
    SUBCASE("temperature must be positive") {
        c.tau = 0.0;
        CHECK_THROWS_AS(c.validate(), NonPositiveTemperature);
    }
    SUBCASE("attempt budgets must be positive") {
        c.unroll_attempts = 0;
        CHECK_THROWS_AS(c.validate(), InvariantViolation);
    }
    SUBCASE("retrieval depth must be positive") {
        c.retrieve_n = 0;
        CHECK_THROWS_AS(c.validate(), InvariantViolation);
    }
    SUBCASE("parallelism cannot be negative") {
        c.eval_parallelism = -1;
        CHECK_THROWS_AS(c.validate(), InvariantViolation);
    }
}

TEST_CASE("config files load every recognized key") {
    testsupport::ScratchDir dir("cfg");
    const auto path = dir.file("config.json");
    {
        std::ofstream out(path);
        out << R"({
            "corpus": "c.jsonl", "qa": "q.jsonl", "store": "s.emb", "index": "i.flat",
            "prompts_dir": "prompts", "encoder_fixtures": "enc", "encoder_url": "",
            "gateway_fixtures": "gw",
            "gateway": {"base_url": "http://h/v1", "model": "m", "api_key_env": "K",
                        "timeout_ms": 5, "max_retries": 2, "max_in_flight": 3,
                        "retry_base_delay_ms": 7},
            "retrieve_n": 9,
            "rerank": {"strategy": "token-contrast", "bucket_count": 3, "seed": 99, "k": 4},
            "tau": 0.25, "alpha_mode": "chain_length", "mode": "key_extract",
            "unified_reasoning": true, "unroll_attempts": 2, "chain_attempts": 4,
            "key_extract_max_iterations": 6, "max_seq_len": 128, "eval_parallelism": 2
        })";
    }
    const auto c = PipelineConfig::from_json_file(path);
    CHECK(c.corpus_path == "c.jsonl");
    CHECK(c.qa_path == "q.jsonl");
    CHECK(c.store_path == "s.emb");
    CHECK(c.index_path == "i.flat");
    CHECK(c.prompts_dir == "prompts");
    CHECK(c.encoder_fixtures == "enc");
    CHECK(c.gateway_fixtures == "gw");
    CHECK(c.gateway.base_url == "http://h/v1");
    CHECK(c.gateway.model == "m");
    CHECK(c.gateway.api_key_env == "K");
    CHECK(c.gateway.timeout_ms == 5);
    CHECK(c.gateway.max_retries == 2);
    CHECK(c.gateway.max_in_flight == 3);
    CHECK(c.gateway.retry_base_delay_ms == 7);
    CHECK(c.retrieve_n == 9);
    CHECK(c.rerank.strategy == RerankStrategy::TokenContrast);
    CHECK(c.rerank.bucket_count == 3);
    CHECK(c.rerank.seed == 99);
    CHECK(c.rerank.k == 4);
    CHECK(c.tau == 0.25);
    CHECK(c.alpha_mode == AlphaMode::ChainLength);
    CHECK(c.mode == AskMode::KeyExtract);
    CHECK(c.unified_reasoning);
    CHECK(c.unroll_attempts == 2);
    CHECK(c.chain_attempts == 4);
    CHECK(c.key_extract_max_iterations == 6);
    CHECK(c.max_seq_len == 128);
    CHECK(c.eval_parallelism == 2);
}

TEST_CASE("config files reject unknown keys and malformed content") {
    testsupport::ScratchDir dir("cfg_bad");

    const auto unknown = dir.file("unknown.json");
    { std::ofstream(unknown) << R"({"retreive_n": 5})"; }
    CHECK_THROWS_AS(PipelineConfig::from_json_file(unknown), SchemaError);

    const auto unknown_nested = dir.file("nested.json");
    { std::ofstream(unknown_nested) << R"({"rerank": {"bukkit_count": 5}})"; }
    CHECK_THROWS_AS(PipelineConfig::from_json_file(unknown_nested), SchemaError);

    const auto not_json = dir.file("broken.json");
    { std::ofstream(not_json) << "{nope"; }
    CHECK_THROWS_AS(PipelineConfig::from_json_file(not_json), SchemaError);

    const auto not_object = dir.file("array.json");
    { std::ofstream(not_object) << "[1,2]"; }
    CHECK_THROWS_AS(PipelineConfig::from_json_file(not_object), SchemaError);

    const auto wrong_type = dir.file("type.json");
    { std::ofstream(wrong_type) << R"({"retrieve_n": "nine"})"; }
    CHECK_THROWS_AS(PipelineConfig::from_json_file(wrong_type), SchemaError);

    const auto invalid = dir.file("invalid.json");
    { std::ofstream(invalid) << R"({"tau": -1.0})"; }
    CHECK_THROWS_AS(PipelineConfig::from_json_file(invalid), NonPositiveTemperature);

    CHECK_THROWS_AS(PipelineConfig::from_json_file(dir.file("absent.json")), IoError);
}

TEST_CASE("the config echo carries settings but no filesystem paths") {
    PipelineConfig c;
    c.corpus_path = "/somewhere/corpus.jsonl";
    c.encoder_fixtures = "/somewhere/enc";
    c.retrieve_n = 12;
    const auto echo = nlohmann::json::parse(config_echo_json(c));
    CHECK(echo.at("retrieve_n") == 12);
    CHECK(echo.at("rerank").at("k") == c.rerank.k);
    CHECK(echo.at("mode") == "single_step");
    CHECK(echo.dump().find("somewhere") == std::string::npos);
    for (const char* absent : {"corpus", "qa", "store", "index", "encoder_fixtures",
                               "gateway_fixtures", "prompts_dir", "gateway"}) {
        CHECK_FALSE(echo.contains(absent));
    }
}

TEST_CASE("documents embed with the title ahead of the body") {
    CHECK(embedding_text({"d", "Title", "Body."}) == "Title\nBody.");
    CHECK(embedding_text({"d", "", "Body only."}) == "Body only.");
}

TEST_CASE("provider factories need a configured backend") {
    PipelineConfig c;
    CHECK_THROWS_AS(make_encoder(c), ProviderUnavailable);
    CHECK_THROWS_AS(make_gateway(c), GatewayError);
}

TEST_CASE("ingest collects per-document failures without giving up") {
    testsupport::ScratchDir dir("ingest_partial");
    PipelineConfig config;
    config.corpus_path = dir.file("corpus.jsonl");
    config.store_path = dir.file("store.emb");
    const std::vector<Document> docs{{"ok", "", "encodable text"},
                                     {"broken", "", "no fixture for this"}};
    save_corpus(docs, config.corpus_path);

    const auto enc = dir.file("enc");
    FixtureEncoderProvider::write_fixture(enc, "encodable text",
                                          e2e::doc_embedding(0));
    FixtureEncoderProvider provider(enc);

    std::vector<std::string> progressed;
    const auto report = run_ingest(config, provider, [&](const std::string& id, bool ok,
                                                         const std::string& reason) {
        progressed.push_back(id + (ok ? ":ok" : ":fail:" + reason.substr(0, 4)));
    });
    CHECK(report.total == 2);
    CHECK(report.encoded == 1);
    REQUIRE(report.failures.size() == 1);
    CHECK(report.failures[0].first == "broken");
    CHECK(progressed.size() == 2);

    // The store holds the document that made it.
    const auto store = load_store(config.store_path);
    CHECK(store.size() == 1);
    CHECK(store.find("ok") != nullptr);

    // When nothing encodes, no store file appears.
    PipelineConfig none = config;
    none.store_path = dir.file("never.emb");
    none.corpus_path = dir.file("corpus2.jsonl");
    save_corpus({{"broken", "", "no fixture for this"}}, none.corpus_path);
    const auto empty_report = run_ingest(none, provider);
    CHECK(empty_report.encoded == 0);
    CHECK_FALSE(std::filesystem::exists(none.store_path));
}

TEST_CASE("a single-step ask runs every stage against the fixtures") {
    e2e::World world(AskMode::SingleStep, "pipe_ask");
    Pipeline pipeline(world.built.config);

    const auto result = pipeline.ask(filmfix::kQuestion);
    CHECK(result.answer == filmfix::kGroundTruth);

    const RunRecord& rec = result.record;
    CHECK_FALSE(rec.failed);
    CHECK(rec.failure_stage.empty());
    CHECK(rec.question == filmfix::kQuestion);
    CHECK(rec.answer == filmfix::kGroundTruth);
    CHECK(rec.llm_calls == 3); // decompose, complete, answer
    CHECK(rec.key_extract_iterations == 0);
    CHECK(rec.retrieved == std::vector<std::string>{"d02", "d01", "d03", "d04", "d05"});
    CHECK(rec.stages == std::vector<std::string>{"unroll", "serialize", "encode", "search",
                                                 "rerank", "complete_chain", "generate_answer"});

    const auto u = parse_unroll_output(filmfix::kUnrollResponse, filmfix::kQuestion);
    CHECK(rec.serialized_query == serialize_unrolled(u));
    CHECK(rec.masked_chain == render_triple_list(chain_to_strings(u.chain())));
    CHECK(rec.completed_chain.find(filmfix::kChiffreDeath) != std::string::npos);
    CHECK(rec.completed_chain.find("<UNCERTAIN>") == std::string::npos);
    CHECK(rec.completed_chain.find("<FILL>") == std::string::npos);
    for (const auto& [stage, ms] : rec.timings_ms) CHECK(ms >= 0.0);
}

TEST_CASE("evaluation scores the fixture dataset perfectly and deterministically") {
    e2e::World world(AskMode::SingleStep, "pipe_eval");
    Pipeline pipeline(world.built.config);

    const auto ev = pipeline.eval(world.built.examples);
    CHECK(ev.metrics.examples == 3);
    CHECK(ev.metrics.failed == 0);
    CHECK(ev.metrics.recall_at_2 == 1.0);
    CHECK(ev.metrics.recall_at_5 == 1.0);
    CHECK(ev.metrics.em == 1.0);
    CHECK(ev.metrics.f1 == 1.0);
    REQUIRE(ev.records.size() == 3);
    CHECK(ev.records[0].example_id == "q1");
    CHECK(ev.records[2].example_id == "q3");

    // A second run, and a second pipeline over the same files, both produce
    // byte-identical reports.
    const auto again = pipeline.eval(world.built.examples);
    CHECK(again.report_json == ev.report_json);
    CHECK(again.breakdown_jsonl == ev.breakdown_jsonl);

    Pipeline fresh(world.built.config);
    const auto other = fresh.eval(world.built.examples);
    CHECK(other.report_json == ev.report_json);
    CHECK(other.breakdown_jsonl == ev.breakdown_jsonl);

    // The report is valid JSON with the expected sections.
    const auto report = nlohmann::json::parse(ev.report_json);
    CHECK(report.at("report") == "eval");
    CHECK(report.at("counts").at("completed") == 3);
    CHECK(report.at("metrics").at("em") == 1.0);
    CHECK(report.at("failures").empty());

    // One JSONL line per record, each with attached scores.
    std::size_t lines = std::count(ev.breakdown_jsonl.begin(), ev.breakdown_jsonl.end(), '\n');
    CHECK(lines == 3);
    const auto first_line = nlohmann::json::parse(
        ev.breakdown_jsonl.substr(0, ev.breakdown_jsonl.find('\n')));
    CHECK(first_line.at("example_id") == "q1");
    CHECK(first_line.at("scores").at("em") == 1);
}

TEST_CASE("an unanswerable question fails its record, not the evaluation") {
    e2e::World world(AskMode::SingleStep, "pipe_missing");
    Pipeline pipeline(world.built.config);

    const auto examples = load_qa(world.built.qa_with_missing);
    REQUIRE(examples.size() == 4);
    const auto ev = pipeline.eval(examples);

    CHECK(ev.metrics.examples == 3);
    CHECK(ev.metrics.failed == 1);
    CHECK(ev.metrics.em == 1.0);

    const auto& q4 = ev.records[3];
    CHECK(q4.example_id == "q4");
    CHECK(q4.failed);
    CHECK(q4.failure_stage == "unroll");
    CHECK_FALSE(q4.failure_reason.empty());
    CHECK(q4.llm_calls == 1); // the one decomposition attempt that missed

    const auto report = nlohmann::json::parse(ev.report_json);
    REQUIRE(report.at("failures").size() == 1);
    CHECK(report["failures"][0].at("id") == "q4");
    CHECK(report["failures"][0].at("stage") == "unroll");
}

TEST_CASE("the key-extract loop re-retrieves with the augmented query") {
    e2e::World world(AskMode::KeyExtract, "pipe_keyext");
    Pipeline pipeline(world.built.config);

    const auto result = pipeline.ask("When did Yvan Chiffre die?");
    CHECK(result.answer == filmfix::kChiffreDeath);

    const RunRecord& rec = result.record;
    CHECK_FALSE(rec.failed);
    CHECK(rec.llm_calls == 3); // decompose, one Continue round, one Answer round
    CHECK(rec.key_extract_iterations == 1);
    CHECK(rec.retrieved.front() == "d03");
    // Two retrieval passes: the initial one and the post-augmentation one.
    CHECK(std::count(rec.stages.begin(), rec.stages.end(), "search") == 2);
    CHECK(std::count(rec.stages.begin(), rec.stages.end(), "key_extract") == 2);
    CHECK(std::count(rec.stages.begin(), rec.stages.end(), "complete_chain") == 0);
}

TEST_CASE("an injected gateway wins over the configured fixtures") {
    e2e::World world(AskMode::SingleStep, "pipe_inject");
    auto mock = std::make_shared<MockChatGateway>();
    mock->push_failure("injected outage");
    Pipeline pipeline(world.built.config, mock);

    const auto result = pipeline.ask(filmfix::kQuestion);
    CHECK(result.record.failed);
    CHECK(result.record.failure_stage == "unroll");
    CHECK(result.record.failure_reason == "injected outage");
    CHECK(mock->calls() == 1);
}

TEST_CASE("construction failures name the stage and stay offline") {
    e2e::World world(AskMode::SingleStep, "pipe_ctor");
    auto mock = std::make_shared<MockChatGateway>();

    PipelineConfig broken = world.built.config;
    broken.index_path = world.dir.file("missing.flat");
    try {
        Pipeline pipeline(broken, mock);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("load_index") != std::string::npos);
    }
    CHECK(mock->calls() == 0);

    PipelineConfig no_corpus = world.built.config;
    no_corpus.corpus_path = world.dir.file("missing.jsonl");
    try {
        Pipeline pipeline(no_corpus, mock);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("load_corpus") != std::string::npos);
    }

    PipelineConfig no_store = world.built.config;
    no_store.store_path = world.dir.file("missing.emb");
    try {
        Pipeline pipeline(no_store, mock);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("load_store") != std::string::npos);
    }

    PipelineConfig no_prompts = world.built.config;
    no_prompts.prompts_dir = world.dir.file("missing_prompts");
    try {
        Pipeline pipeline(no_prompts, mock);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("load_prompts") != std::string::npos);
    }
}

TEST_CASE("run records serialize without wall-clock noise") {
    RunRecord rec;
    rec.example_id = "qx";
    rec.question = "Q?";
    rec.retrieved = {"d1"};
    rec.answer = "A";
    rec.stages = {"unroll"};
    rec.timings_ms["unroll"] = 123.456;
    rec.llm_calls = 2;

    const auto j = nlohmann::json::parse(run_record_json(rec));
    CHECK(j.at("example_id") == "qx");
    CHECK(j.at("llm_calls") == 2);
    CHECK(j.at("failed") == false);
    CHECK_FALSE(j.contains("timings_ms"));

    RunRecord other = rec;
    other.timings_ms["unroll"] = 999.9;
    CHECK(run_record_json(other) == run_record_json(rec));
}

} // TEST_SUITE
