#include "cooprag/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace cooprag {

RerankStrategy rerank_strategy_from_string(std::string_view name) {
    if (name == "naive-gap") return RerankStrategy::NaiveGap;
    if (name == "gap-weighted") return RerankStrategy::GapWeighted;
    if (name == "token-contrast") return RerankStrategy::TokenContrast;
    if (name == "plain-maxsim") return RerankStrategy::PlainMaxSim;
    throw Error("unknown rerank strategy: " + std::string(name) +
                " (expected naive-gap, gap-weighted, token-contrast or plain-maxsim)");
}

std::string_view to_string(RerankStrategy s) {
    switch (s) {
    case RerankStrategy::NaiveGap: return "naive-gap";
    case RerankStrategy::GapWeighted: return "gap-weighted";
    case RerankStrategy::TokenContrast: return "token-contrast";
    case RerankStrategy::PlainMaxSim: return "plain-maxsim";
    }
    return "?";
}

void RerankConfig::validate() const {
    if (bucket_count < 1) {
        throw BadBucketCount("bucket count must be at least 1");
    }
    if (k < 1) {
        throw InvariantViolation("rerank k must be positive");
    }
}

CandidateLayerSet select_candidate_layers(int total_layers, int bucket_count, std::uint64_t seed) {
    if (total_layers < 2) {
        throw BadBucketCount("need at least 2 layers to have a premature layer");
    }
    const int premature = total_layers - 1;
    if (bucket_count < 1 || bucket_count > premature) {
        throw BadBucketCount("bucket count " + std::to_string(bucket_count) +
                             " outside 1.." + std::to_string(premature));
    }

    CandidateLayerSet out;
    out.bucket_count = bucket_count;
    out.seed = seed;
    out.layers.reserve(static_cast<std::size_t>(bucket_count));

    // mt19937_64 with a plain modulo bound: std::uniform_int_distribution is
    // implementation-defined, and reranks must reproduce across toolchains.
    std::mt19937_64 rng(seed);
    const int base = premature / bucket_count;
    const int remainder = premature % bucket_count;
    int start = 1;
    for (int b = 0; b < bucket_count; ++b) {
        const int size = base + (b < remainder ? 1 : 0);
        const int pick = start + static_cast<int>(rng() % static_cast<std::uint64_t>(size));
        out.layers.push_back(pick);
        start += size;
    }
    return out;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw DimMismatch("cosine of vectors with dims " + std::to_string(a.size()) + " and " +
                          std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        const double y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na < 1e-24 || nb < 1e-24) {
        return 0.0;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

void check_pair(const LayeredEmbeddings& u, const LayeredEmbeddings& d) {
    if (u.dim() != d.dim()) {
        throw DimMismatch("query dim " + std::to_string(u.dim()) + " vs doc dim " +
                          std::to_string(d.dim()));
    }
    if (u.layers() != d.layers()) {
        throw DimMismatch("query has " + std::to_string(u.layers()) + " layers, doc has " +
                          std::to_string(d.layers()));
    }
}

void check_layers(const CandidateLayerSet& c, const LayeredEmbeddings& d) {
    if (c.layers.empty()) {
        throw BadBucketCount("candidate layer set is empty");
    }
    for (int l : c.layers) {
        if (l < 1 || l >= d.layers()) {
            throw LayerOutOfRange("candidate layer " + std::to_string(l) +
                                  " outside 1.." + std::to_string(d.layers() - 1));
        }
    }
}

} // namespace

double token_gap(std::span<const float> q, const LayeredEmbeddings& d, int token_index,
                 const CandidateLayerSet& c) {
    check_layers(c, d);
    const int last = d.layers();
    const double final_sim = cosine_similarity(q, d.token(last, token_index));
    double best = -std::numeric_limits<double>::infinity();
    for (int l : c.layers) {
        best = std::max(best, final_sim - cosine_similarity(q, d.token(l, token_index)));
    }
    return best;
}

double score_naive(const LayeredEmbeddings& u, const LayeredEmbeddings& d,
                   const CandidateLayerSet& c) {
    check_pair(u, d);
    check_layers(c, d);
    const int last = u.layers();
    double sum = 0.0;
    for (int i = 0; i < u.tokens(); ++i) {
        const auto q = u.token(last, i);
        double best = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < d.tokens(); ++j) {
            best = std::max(best, token_gap(q, d, j, c));
        }
        sum += best;
    }
    return sum / u.tokens();
}

double gap_weight(const LayeredEmbeddings& u, const LayeredEmbeddings& d,
                  const CandidateLayerSet& c) {
    check_pair(u, d);
    return token_gap(u.token(u.layers(), 0), d, 0, c);
}

double plain_maxsim(const LayeredEmbeddings& u, const LayeredEmbeddings& d) {
    check_pair(u, d);
    const int last = u.layers();
    double sum = 0.0;
    for (int i = 0; i < u.tokens(); ++i) {
        const auto q = u.token(last, i);
        double best = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < d.tokens(); ++j) {
            best = std::max(best, cosine_similarity(q, d.token(last, j)));
        }
        sum += best;
    }
    return sum / u.tokens();
}

double score_optimized(const LayeredEmbeddings& u, const LayeredEmbeddings& d,
                       const CandidateLayerSet& c) {
    return gap_weight(u, d, c) * plain_maxsim(u, d);
}

double score_token_contrast(const LayeredEmbeddings& u, const LayeredEmbeddings& d) {
    check_pair(u, d);
    if (d.layers() < 2) {
        throw LayerOutOfRange("token-contrast scoring needs at least 2 layers");
    }
    const int last = d.layers();

    // Pick each doc token's most-contrasting premature layer by raw L2
    // distance from the final layer, lowest layer on ties.
    std::vector<int> contrast_layer(static_cast<std::size_t>(d.tokens()), 1);
    for (int j = 0; j < d.tokens(); ++j) {
        const auto fin = d.token(last, j);
        double best_dist = -1.0;
        for (int l = 1; l < last; ++l) {
            const auto early = d.token(l, j);
            double dist2 = 0.0;
            for (int m = 0; m < d.dim(); ++m) {
                const double diff = static_cast<double>(fin[static_cast<std::size_t>(m)]) -
                                    static_cast<double>(early[static_cast<std::size_t>(m)]);
                dist2 += diff * diff;
            }
            if (dist2 > best_dist) {
                best_dist = dist2;
                contrast_layer[static_cast<std::size_t>(j)] = l;
            }
        }
    }

    double sum = 0.0;
    for (int i = 0; i < u.tokens(); ++i) {
        const auto q = u.token(last, i);
        double best = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < d.tokens(); ++j) {
            best = std::max(
                best, cosine_similarity(q, d.token(contrast_layer[static_cast<std::size_t>(j)], j)));
        }
        sum += best;
    }
    return sum / u.tokens();
}

double score_document(const LayeredEmbeddings& u, const LayeredEmbeddings& d,
                      RerankStrategy strategy, const CandidateLayerSet& c) {
    switch (strategy) {
    case RerankStrategy::NaiveGap:
        return score_naive(u, d, c);
    case RerankStrategy::GapWeighted:
        return score_optimized(u, d, c);
    case RerankStrategy::TokenContrast:
        return score_token_contrast(u, d);
    case RerankStrategy::PlainMaxSim:
        return plain_maxsim(u, d);
    }
    throw Error("unhandled rerank strategy");
}

std::vector<RankedDocument> rerank(const std::vector<std::string>& candidates,
                                   const LayeredEmbeddings& u, const EmbeddingStore& store,
                                   const RerankConfig& config) {
    config.validate();
    if (candidates.empty()) {
        return {};
    }

    CandidateLayerSet layers;
    const bool needs_layers = config.strategy == RerankStrategy::NaiveGap ||
                              config.strategy == RerankStrategy::GapWeighted;
    if (needs_layers) {
        layers = select_candidate_layers(store.metadata().layers, config.bucket_count, config.seed);
    }

    std::vector<RankedDocument> scored;
    scored.reserve(candidates.size());
    for (const auto& id : candidates) {
        const LayeredEmbeddings* emb = store.find(id);
        if (emb == nullptr) {
            throw UnknownDocId("candidate not in store: " + id);
        }
        scored.push_back(RankedDocument{id, score_document(u, *emb, config.strategy, layers), 0});
    }
    std::sort(scored.begin(), scored.end(), [](const RankedDocument& a, const RankedDocument& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.doc_id < b.doc_id;
    });
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(config.k), scored.size());
    scored.resize(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        scored[i].rank = static_cast<int>(i) + 1;
    }
    return scored;
}

} // namespace cooprag
