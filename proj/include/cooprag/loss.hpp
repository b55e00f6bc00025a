#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cooprag/core.hpp"

namespace cooprag {

inline constexpr double kDefaultTau = 0.05;

// Which question property drives the difficulty weight: the number of
// sub-questions (default) or the reasoning-chain length.
enum class AlphaMode { SubQuestions, ChainLength };

AlphaMode alpha_mode_from_string(std::string_view name);
std::string_view to_string(AlphaMode m);

struct QuestionDifficulty {
    std::string id; // optional, for fixtures
    std::size_t sub_question_count = 0;
    std::size_t chain_length = 0;

    bool operator==(const QuestionDifficulty&) const = default;
};

QuestionDifficulty difficulty_of(const UnrolledQuestion& u);

// ln(1 + count) where count depends on the mode. Weighs hard questions more.
double alpha(const QuestionDifficulty& q, AlphaMode mode);
double alpha(const UnrolledQuestion& u, AlphaMode mode = AlphaMode::SubQuestions);

// Training batch layout: b questions against 2b documents, where column i is
// question i's positive and column b+i its hard negative. Scores live in a
// separate matrix so fixtures and gradient checks need no embeddings.
struct BatchSpec {
    std::vector<QuestionDifficulty> questions;
    double tau = kDefaultTau;
    AlphaMode alpha_mode = AlphaMode::SubQuestions;

    std::size_t size() const { return questions.size(); }
    void validate() const;
};

struct ScoreMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    static ScoreMatrix zeros(std::size_t rows, std::size_t cols);

    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t i, std::size_t j);

    bool operator==(const ScoreMatrix&) const = default;
};

// -log softmax(scores / tau) at positive_index, max-stabilized so scores up
// to |s| = 100 at tau = 0.05 stay in range.
double info_nce_row(std::span<const double> scores, std::size_t positive_index, double tau);

// sum_i alpha_i * info_nce_row(scores[i], positive = i).
double batch_loss(const BatchSpec& batch, const ScoreMatrix& scores);

// d batch_loss / d scores: alpha_i / tau * (softmax(scores[i] / tau) - onehot_i).
// Downstream trainers chain this into encoder gradients; this module stops
// at the score matrix.
ScoreMatrix batch_loss_grad(const BatchSpec& batch, const ScoreMatrix& scores);

struct BatchFixture {
    BatchSpec batch;
    ScoreMatrix scores;
};

BatchFixture load_batch_fixture(const std::filesystem::path& path);
void save_batch_fixture(const BatchFixture& fixture, const std::filesystem::path& path);

} // namespace cooprag
