#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "cooprag/loss.hpp"

#include "support/oracles.hpp"
#include "support/synth.hpp"

using namespace cooprag;
using testsupport::ScratchDir;

namespace {

BatchSpec batch_of(const std::vector<std::size_t>& sub_counts, double tau = kDefaultTau,
                   AlphaMode mode = AlphaMode::SubQuestions) {
    BatchSpec batch;
    batch.tau = tau;
    batch.alpha_mode = mode;
    for (std::size_t i = 0; i < sub_counts.size(); ++i) {
        batch.questions.push_back(
            QuestionDifficulty{"q" + std::to_string(i), sub_counts[i], sub_counts[i] + 1});
    }
    return batch;
}

ScoreMatrix random_scores(std::mt19937_64& rng, std::size_t b) {
    auto scores = ScoreMatrix::zeros(b, 2 * b);
    for (auto& v : scores.values) v = 2.0 * testsupport::uniform01(rng) - 1.0;
    return scores;
}

} // namespace

TEST_SUITE("loss") {

TEST_CASE("alpha mode names round trip") {
    CHECK(alpha_mode_from_string("sub_questions") == AlphaMode::SubQuestions);
    CHECK(alpha_mode_from_string("chain_length") == AlphaMode::ChainLength);
    CHECK(to_string(AlphaMode::ChainLength) == "chain_length");
    CHECK_THROWS_AS(alpha_mode_from_string("uniform"), Error);
}

TEST_CASE("difficulty counts come straight from the decomposition") {
    std::vector<Triple> triples;
    triples.push_back(Triple(EntitySlot::text("A"), EntitySlot::text("r"), EntitySlot::text("B")));
    triples.push_back(Triple(EntitySlot::text("B"), EntitySlot::text("r"), EntitySlot::fill()));
    const UnrolledQuestion u("Q?", {"s1", "s2", "s3"},
                             ReasoningChain::masked(std::move(triples)), 2, "raw");

    const auto d = difficulty_of(u);
    CHECK(d.sub_question_count == 3);
    CHECK(d.chain_length == 2);

    CHECK(alpha(u, AlphaMode::SubQuestions) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(alpha(u, AlphaMode::ChainLength) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("alpha is ln(1 + count) and exactly zero for zero count") {
    CHECK(alpha(QuestionDifficulty{"", 3, 0}, AlphaMode::SubQuestions) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(alpha(QuestionDifficulty{"", 0, 9}, AlphaMode::SubQuestions) == 0.0);
    CHECK(alpha(QuestionDifficulty{"", 9, 0}, AlphaMode::ChainLength) == 0.0);
    CHECK(alpha(QuestionDifficulty{"", 0, 5}, AlphaMode::ChainLength) ==
          doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("a uniform row costs ln of the row length") {
    for (std::size_t b : {1u, 2u, 4u, 8u}) {
        const std::vector<double> row(2 * b, 0.37);
        CHECK(info_nce_row(row, 0, kDefaultTau) ==
              doctest::Approx(std::log(static_cast<double>(2 * b))).epsilon(1e-9));
    }
}

TEST_CASE("row loss validates its inputs") {
    const std::vector<double> row{0.1, 0.2};
    CHECK_THROWS_AS(info_nce_row(row, 2, kDefaultTau), IndexOutOfRange);
    CHECK_THROWS_AS(info_nce_row(row, 0, 0.0), NonPositiveTemperature);
    CHECK_THROWS_AS(info_nce_row(row, 0, -1.0), NonPositiveTemperature);
}

TEST_CASE("extreme scores stay finite through max subtraction") {
    const std::vector<double> row{100.0, -100.0};
    const double easy = info_nce_row(row, 0, 0.05);
    const double hard = info_nce_row(row, 1, 0.05);
    CHECK(std::isfinite(easy));
    CHECK(std::isfinite(hard));
    CHECK(easy == doctest::Approx(0.0).epsilon(1e-9));
    // Picking the wrong side of a 200-point gap at tau 0.05 costs 4000 nats.
    CHECK(hard == doctest::Approx(4000.0).epsilon(1e-9));
}

TEST_CASE("a hand-computed single-question batch") {
    auto batch = batch_of({2}, 0.5);
    auto scores = ScoreMatrix::zeros(1, 2);
    scores.at(0, 0) = 0.2;
    scores.at(0, 1) = -0.4;

    const double z0 = 0.2 / 0.5;
    const double z1 = -0.4 / 0.5;
    const double expected =
        std::log(3.0) * (-std::log(std::exp(z0) / (std::exp(z0) + std::exp(z1))));
    CHECK(batch_loss(batch, scores) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("zero-difficulty batches cost exactly zero") {
    std::mt19937_64 rng(42);
    auto batch = batch_of({0, 0, 0});
    const auto scores = random_scores(rng, 3);
    CHECK(batch_loss(batch, scores) == 0.0);

    // The gradient vanishes with the weights.
    const auto grad = batch_loss_grad(batch, scores);
    for (double g : grad.values) CHECK(g == 0.0);
}

TEST_CASE("batch loss matches the reference implementation") {
    std::mt19937_64 rng(1234);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t b = 1 + rng() % 6;
        auto batch = batch_of({});
        for (std::size_t i = 0; i < b; ++i) {
            batch.questions.push_back(QuestionDifficulty{"", rng() % 5, 1 + rng() % 5});
        }
        batch.alpha_mode = trial % 2 == 0 ? AlphaMode::SubQuestions : AlphaMode::ChainLength;
        const auto scores = random_scores(rng, b);
        CHECK(batch_loss(batch, scores) ==
              doctest::Approx(oracles::info_nce_loss(batch, scores)).epsilon(1e-9));
    }
}

TEST_CASE("the analytic gradient matches finite differences") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t b = 1 + rng() % 4;
        auto batch = batch_of({});
        for (std::size_t i = 0; i < b; ++i) {
            batch.questions.push_back(QuestionDifficulty{"", 1 + rng() % 4, 1 + rng() % 4});
        }
        const auto scores = random_scores(rng, b);
        CHECK(oracles::fd_max_rel_error(batch, scores) < 1e-4);
    }
}

TEST_CASE("gradient rows sum to zero") {
    std::mt19937_64 rng(99);
    auto batch = batch_of({1, 2, 3, 4});
    const auto scores = random_scores(rng, 4);
    const auto grad = batch_loss_grad(batch, scores);
    for (std::size_t i = 0; i < grad.rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < grad.cols; ++j) sum += grad.at(i, j);
        CHECK(sum == doctest::Approx(0.0).epsilon(1e-12));
    }
    // The positive column is pushed up (negative gradient) for every
    // weighted question.
    for (std::size_t i = 0; i < grad.rows; ++i) {
        CHECK(grad.at(i, i) < 0.0);
    }
}

TEST_CASE("shape and content violations are rejected") {
    std::mt19937_64 rng(5);
    auto batch = batch_of({1, 2});

    CHECK_THROWS_AS(batch_loss(batch, ScoreMatrix::zeros(2, 3)), DimMismatch);
    CHECK_THROWS_AS(batch_loss(batch, ScoreMatrix::zeros(1, 4)), DimMismatch);
    CHECK_THROWS_AS(batch_loss_grad(batch, ScoreMatrix::zeros(2, 3)), DimMismatch);

    auto scores = random_scores(rng, 2);
    scores.at(1, 2) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(batch_loss(batch, scores), InvariantViolation);

    auto empty = batch_of({});
    CHECK_THROWS_AS(batch_loss(empty, ScoreMatrix::zeros(0, 0)), InvariantViolation);

    auto cold = batch_of({1}, 0.0);
    CHECK_THROWS_AS(batch_loss(cold, ScoreMatrix::zeros(1, 2)), NonPositiveTemperature);
}

TEST_CASE("score matrix indexing is bounds checked") {
    auto m = ScoreMatrix::zeros(2, 4);
    CHECK(m.at(1, 3) == 0.0);
    m.at(1, 3) = 5.0;
    CHECK(m.at(1, 3) == 5.0);
    CHECK_THROWS_AS(m.at(2, 0), IndexOutOfRange);
    CHECK_THROWS_AS(m.at(0, 4), IndexOutOfRange);
}

TEST_CASE("batch fixtures round trip through disk") {
    ScratchDir dir("loss_fix");
    std::mt19937_64 rng(8);
    BatchFixture fx;
    fx.batch = batch_of({2, 0, 5}, 0.07, AlphaMode::ChainLength);
    fx.scores = random_scores(rng, 3);

    const auto path = dir.file("batch.json");
    save_batch_fixture(fx, path);
    const auto loaded = load_batch_fixture(path);

    CHECK(loaded.batch.questions == fx.batch.questions);
    CHECK(loaded.batch.tau == fx.batch.tau);
    CHECK(loaded.batch.alpha_mode == fx.batch.alpha_mode);
    CHECK(loaded.scores == fx.scores);
    CHECK(batch_loss(loaded.batch, loaded.scores) ==
          doctest::Approx(batch_loss(fx.batch, fx.scores)).epsilon(1e-12));
}

TEST_CASE("batch fixture loading rejects bad inputs") {
    ScratchDir dir("loss_bad");
    auto write = [&](const char* name, const std::string& body) {
        std::ofstream out(dir.file(name));
        out << body;
        return dir.file(name);
    };

    CHECK_THROWS_AS(load_batch_fixture(dir.file("missing.json")), IoError);
    CHECK_THROWS_AS(load_batch_fixture(write("bad.json", "{not json")), SchemaError);
    CHECK_THROWS_AS(load_batch_fixture(write("no_tau.json",
                                             R"({"alpha_mode":"sub_questions","questions":[],"scores":[]})")),
                    SchemaError);
    CHECK_THROWS_AS(
        load_batch_fixture(write(
            "ragged.json",
            R"({"tau":0.05,"alpha_mode":"sub_questions",)"
            R"("questions":[{"sub_question_count":1,"chain_length":1}],"scores":[[1.0,2.0],[1.0]]})")),
        SchemaError);
    CHECK_THROWS_AS(
        load_batch_fixture(write(
            "wrong_shape.json",
            R"({"tau":0.05,"alpha_mode":"sub_questions",)"
            R"("questions":[{"sub_question_count":1,"chain_length":1}],"scores":[[1.0,2.0,3.0]]})")),
        DimMismatch);
}

} // TEST_SUITE
