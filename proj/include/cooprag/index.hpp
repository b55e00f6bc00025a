#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cooprag/core.hpp"
#include "cooprag/embedding.hpp"

namespace cooprag {

inline constexpr int kDefaultRetrieveN = 20;

// Exact flat cosine index over final-layer CLS vectors. Rows are
// L2-normalized, so a dot product against the normalized query is the exact
// cosine; search fully sorts and is never approximate.
class FlatIndex {
public:
    // An empty index; build() and load() produce populated ones.
    FlatIndex() = default;

    static FlatIndex build(const EmbeddingStore& store);

    // Top-n by cosine descending, ties broken by doc id ascending. Returns
    // min(n, size()) entries with 1-based ranks.
    std::vector<RankedDocument> search(std::span<const float> query, int n) const;

    int dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& doc_ids() const { return ids_; }
    std::span<const float> row(std::size_t i) const;

    void save(const std::filesystem::path& path) const;
    static FlatIndex load(const std::filesystem::path& path);

    bool operator==(const FlatIndex&) const = default;

private:
    int dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> rows_; // ids_.size() x dim_, each row unit norm
};

} // namespace cooprag
