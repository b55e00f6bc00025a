#include "cooprag/loss.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace cooprag {

AlphaMode alpha_mode_from_string(std::string_view name) {
    if (name == "sub_questions") return AlphaMode::SubQuestions;
    if (name == "chain_length") return AlphaMode::ChainLength;
    throw Error("unknown alpha mode: " + std::string(name) +
                " (expected sub_questions or chain_length)");
}

std::string_view to_string(AlphaMode m) {
    return m == AlphaMode::SubQuestions ? "sub_questions" : "chain_length";
}

QuestionDifficulty difficulty_of(const UnrolledQuestion& u) {
    return QuestionDifficulty{"", u.sub_questions().size(), u.chain().size()};
}

double alpha(const QuestionDifficulty& q, AlphaMode mode) {
    const std::size_t count =
        mode == AlphaMode::SubQuestions ? q.sub_question_count : q.chain_length;
    return std::log1p(static_cast<double>(count));
}

double alpha(const UnrolledQuestion& u, AlphaMode mode) {
    return alpha(difficulty_of(u), mode);
}

void BatchSpec::validate() const {
    if (questions.empty()) {
        throw InvariantViolation("batch must contain at least one question");
    }
    if (!(tau > 0.0)) {
        throw NonPositiveTemperature("temperature must be positive, got " + std::to_string(tau));
    }
}

ScoreMatrix ScoreMatrix::zeros(std::size_t rows, std::size_t cols) {
    return ScoreMatrix{rows, cols, std::vector<double>(rows * cols, 0.0)};
}

double ScoreMatrix::at(std::size_t i, std::size_t j) const {
    if (i >= rows || j >= cols) {
        throw IndexOutOfRange("score index (" + std::to_string(i) + "," + std::to_string(j) +
                              ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    return values[i * cols + j];
}

double& ScoreMatrix::at(std::size_t i, std::size_t j) {
    if (i >= rows || j >= cols) {
        throw IndexOutOfRange("score index (" + std::to_string(i) + "," + std::to_string(j) +
                              ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    return values[i * cols + j];
}

double info_nce_row(std::span<const double> scores, std::size_t positive_index, double tau) {
    if (!(tau > 0.0)) {
        throw NonPositiveTemperature("temperature must be positive, got " + std::to_string(tau));
    }
    if (positive_index >= scores.size()) {
        throw IndexOutOfRange("positive index " + std::to_string(positive_index) +
                              " outside row of length " + std::to_string(scores.size()));
    }
    double zmax = -std::numeric_limits<double>::infinity();
    for (double s : scores) {
        zmax = std::max(zmax, s / tau);
    }
    double sum = 0.0;
    for (double s : scores) {
        sum += std::exp(s / tau - zmax);
    }
    const double log_denominator = zmax + std::log(sum);
    return log_denominator - scores[positive_index] / tau;
}

namespace {

void check_dims(const BatchSpec& batch, const ScoreMatrix& scores) {
    batch.validate();
    const std::size_t b = batch.size();
    if (scores.rows != b || scores.cols != 2 * b) {
        throw DimMismatch("score matrix is " + std::to_string(scores.rows) + "x" +
                          std::to_string(scores.cols) + ", batch of " + std::to_string(b) +
                          " needs " + std::to_string(b) + "x" + std::to_string(2 * b));
    }
    for (double v : scores.values) {
        if (!std::isfinite(v)) {
            throw InvariantViolation("score matrix entries must be finite");
        }
    }
}

} // namespace

double batch_loss(const BatchSpec& batch, const ScoreMatrix& scores) {
    check_dims(batch, scores);
    const std::size_t b = batch.size();
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        std::span<const double> row{scores.values.data() + i * scores.cols, scores.cols};
        total += alpha(batch.questions[i], batch.alpha_mode) * info_nce_row(row, i, batch.tau);
    }
    return total;
}

ScoreMatrix batch_loss_grad(const BatchSpec& batch, const ScoreMatrix& scores) {
    check_dims(batch, scores);
    const std::size_t b = batch.size();
    ScoreMatrix grad = ScoreMatrix::zeros(scores.rows, scores.cols);
    for (std::size_t i = 0; i < b; ++i) {
        const double a = alpha(batch.questions[i], batch.alpha_mode);
        std::span<const double> row{scores.values.data() + i * scores.cols, scores.cols};
        double zmax = -std::numeric_limits<double>::infinity();
        for (double s : row) {
            zmax = std::max(zmax, s / batch.tau);
        }
        double sum = 0.0;
        for (double s : row) {
            sum += std::exp(s / batch.tau - zmax);
        }
        for (std::size_t j = 0; j < scores.cols; ++j) {
            const double softmax_j = std::exp(row[j] / batch.tau - zmax) / sum;
            const double indicator = j == i ? 1.0 : 0.0;
            grad.values[i * scores.cols + j] = a / batch.tau * (softmax_j - indicator);
        }
    }
    return grad;
}

BatchFixture load_batch_fixture(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open batch fixture: " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("batch fixture is not valid JSON: " + std::string(e.what()));
    }
    try {
        BatchFixture fx;
        fx.batch.tau = j.at("tau").get<double>();
        fx.batch.alpha_mode = alpha_mode_from_string(j.at("alpha_mode").get<std::string>());
        for (const auto& q : j.at("questions")) {
            QuestionDifficulty d;
            d.id = q.value("id", "");
            d.sub_question_count = q.at("sub_question_count").get<std::size_t>();
            d.chain_length = q.at("chain_length").get<std::size_t>();
            fx.batch.questions.push_back(std::move(d));
        }
        const auto& rows = j.at("scores");
        fx.scores.rows = rows.size();
        for (const auto& row : rows) {
            if (fx.scores.cols == 0) {
                fx.scores.cols = row.size();
            } else if (row.size() != fx.scores.cols) {
                throw SchemaError("score rows have inconsistent lengths");
            }
            for (const auto& v : row) {
                fx.scores.values.push_back(v.get<double>());
            }
        }
        check_dims(fx.batch, fx.scores);
        return fx;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("batch fixture schema: " + std::string(e.what()));
    }
}

void save_batch_fixture(const BatchFixture& fixture, const std::filesystem::path& path) {
    check_dims(fixture.batch, fixture.scores);
    nlohmann::json j;
    j["tau"] = fixture.batch.tau;
    j["alpha_mode"] = std::string(to_string(fixture.batch.alpha_mode));
    j["questions"] = nlohmann::json::array();
    for (const auto& q : fixture.batch.questions) {
        nlohmann::json qj;
        if (!q.id.empty()) {
            qj["id"] = q.id;
        }
        qj["sub_question_count"] = q.sub_question_count;
        qj["chain_length"] = q.chain_length;
        j["questions"].push_back(std::move(qj));
    }
    j["scores"] = nlohmann::json::array();
    for (std::size_t i = 0; i < fixture.scores.rows; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < fixture.scores.cols; ++c) {
            row.push_back(fixture.scores.at(i, c));
        }
        j["scores"].push_back(std::move(row));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << j.dump(2) << '\n';
}

} // namespace cooprag
