#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cooprag/core.hpp"
#include "cooprag/embedding.hpp"

namespace cooprag {

// Layer-contrast reranking. A document whose premature-layer representation
// is far from its final-layer representation, relative to the query, tends
// to carry knowledge the encoder only assembles late; the scores below
// reward exactly that gap.
//
// Strategies:
//   NaiveGap      per-token max over candidate layers of
//                 cos(q_i, d_j^(L)) - cos(q_i, d_j^(l)), averaged MaxSim-style
//   GapWeighted   final-layer MaxSim average scaled by the CLS gap weight
//   TokenContrast MaxSim against each doc token's most-contrasting layer
//   PlainMaxSim   final-layer MaxSim average, no layer contrast (baseline)
enum class RerankStrategy { NaiveGap, GapWeighted, TokenContrast, PlainMaxSim };

RerankStrategy rerank_strategy_from_string(std::string_view name);
std::string_view to_string(RerankStrategy s);

// Premature layers drawn one-per-bucket from 1..L_total-1. The final layer
// never participates: its gap against itself is identically zero.
struct CandidateLayerSet {
    std::vector<int> layers; // ascending, distinct
    int bucket_count = 0;
    std::uint64_t seed = 0;

    bool operator==(const CandidateLayerSet&) const = default;
};

struct RerankConfig {
    RerankStrategy strategy = RerankStrategy::GapWeighted;
    // The useful range is 2..4; any value in 1..L_total-1 is accepted when
    // configured explicitly.
    int bucket_count = 4;
    std::uint64_t seed = 42;
    int k = 5;

    void validate() const;
};

// Partitions layers 1..total_layers-1 into bucket_count contiguous buckets
// with sizes as equal as possible (longer buckets first) and draws one layer
// uniformly per bucket. Deterministic for a fixed seed, and drawn once per
// run, not per document.
CandidateLayerSet select_candidate_layers(int total_layers, int bucket_count, std::uint64_t seed);

// Cosine of raw vectors; normalization happens here, not in storage. A
// near-zero vector has no direction, so its cosine is reported as 0.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// max over l in C of cos(q, d_j^(L)) - cos(q, d_j^(l)) for doc token j.
// q is a final-layer query token vector.
double token_gap(std::span<const float> q, const LayeredEmbeddings& d, int token_index,
                 const CandidateLayerSet& c);

double score_naive(const LayeredEmbeddings& u, const LayeredEmbeddings& d,
                   const CandidateLayerSet& c);

// token_gap of the two CLS tokens; unclamped, may be negative.
double gap_weight(const LayeredEmbeddings& u, const LayeredEmbeddings& d,
                  const CandidateLayerSet& c);

double plain_maxsim(const LayeredEmbeddings& u, const LayeredEmbeddings& d);

// gap_weight(u, d, c) * plain_maxsim(u, d), computed as exactly that product.
double score_optimized(const LayeredEmbeddings& u, const LayeredEmbeddings& d,
                       const CandidateLayerSet& c);

// Per doc token, contrasts against the layer with the largest L2 distance
// from the final layer (ties -> lowest layer), then runs MaxSim against
// those contrasted token vectors.
double score_token_contrast(const LayeredEmbeddings& u, const LayeredEmbeddings& d);

double score_document(const LayeredEmbeddings& u, const LayeredEmbeddings& d,
                      RerankStrategy strategy, const CandidateLayerSet& c);

std::vector<RankedDocument> rerank(const std::vector<std::string>& candidates,
                                   const LayeredEmbeddings& u, const EmbeddingStore& store,
                                   const RerankConfig& config);

} // namespace cooprag
