#include "cooprag/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cooprag {

namespace {

constexpr char kIndexMagic[4] = {'C', 'R', 'F', 'I'};
constexpr std::uint32_t kIndexVersion = 1;
constexpr double kZeroNormEps = 1e-12;

double norm_of(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) {
        s += static_cast<double>(x) * static_cast<double>(x);
    }
    return std::sqrt(s);
}

} // namespace

FlatIndex FlatIndex::build(const EmbeddingStore& store) {
    if (store.empty()) {
        throw EmptyStore("cannot build an index from an empty store");
    }
    FlatIndex index;
    index.dim_ = store.metadata().dim;
    index.ids_.reserve(store.size());
    index.rows_.reserve(store.size() * static_cast<std::size_t>(index.dim_));
    for (const auto& [id, emb] : store.docs()) {
        auto cls = emb.cls(emb.layers());
        const double norm = norm_of(cls);
        if (norm < kZeroNormEps) {
            throw ZeroVector("final-layer CLS of doc '" + id + "' has near-zero norm");
        }
        index.ids_.push_back(id);
        for (float x : cls) {
            index.rows_.push_back(static_cast<float>(static_cast<double>(x) / norm));
        }
    }
    return index;
}

std::span<const float> FlatIndex::row(std::size_t i) const {
    return {rows_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
}

std::vector<RankedDocument> FlatIndex::search(std::span<const float> query, int n) const {
    if (static_cast<int>(query.size()) != dim_) {
        throw DimMismatch("query dim " + std::to_string(query.size()) + " vs index dim " +
                          std::to_string(dim_));
    }
    if (n < 1) {
        throw InvariantViolation("search needs a positive n");
    }

    // A zero query has no defined direction; every cosine is reported as 0
    // and the doc-id tie-break fully determines the order.
    std::vector<double> q(query.begin(), query.end());
    const double qnorm = norm_of(query);
    if (qnorm >= kZeroNormEps) {
        for (double& x : q) {
            x /= qnorm;
        }
    } else {
        std::fill(q.begin(), q.end(), 0.0);
    }

    std::vector<RankedDocument> scored(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        auto r = row(i);
        double dot = 0.0;
        for (int j = 0; j < dim_; ++j) {
            dot += q[static_cast<std::size_t>(j)] * static_cast<double>(r[static_cast<std::size_t>(j)]);
        }
        scored[i] = RankedDocument{ids_[i], dot, 0};
    }
    std::sort(scored.begin(), scored.end(), [](const RankedDocument& a, const RankedDocument& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.doc_id < b.doc_id;
    });
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(n), scored.size());
    scored.resize(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        scored[i].rank = static_cast<int>(i) + 1;
    }
    return scored;
}

void FlatIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) {
            b[i] = static_cast<unsigned char>(v >> (8 * i));
        }
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    out.write(kIndexMagic, 4);
    put_u32(kIndexVersion);
    unsigned char cnt[8];
    const std::uint64_t count = ids_.size();
    for (int i = 0; i < 8; ++i) {
        cnt[i] = static_cast<unsigned char>(count >> (8 * i));
    }
    out.write(reinterpret_cast<const char*>(cnt), 8);
    put_u32(static_cast<std::uint32_t>(dim_));
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        put_u32(static_cast<std::uint32_t>(ids_[i].size()));
        out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
        auto r = row(i);
        out.write(reinterpret_cast<const char*>(r.data()),
                  static_cast<std::streamsize>(r.size() * sizeof(float)));
    }
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

FlatIndex FlatIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path.string());
    }
    auto need = [&](char* dst, std::size_t count, const char* what) {
        in.read(dst, static_cast<std::streamsize>(count));
        if (static_cast<std::size_t>(in.gcount()) != count) {
            throw TruncatedFile(std::string("file ends inside ") + what);
        }
    };
    auto get_u32 = [&](const char* what) {
        unsigned char b[4];
        need(reinterpret_cast<char*>(b), 4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | b[i];
        }
        return v;
    };
    char magic[4];
    need(magic, 4, "magic");
    if (std::memcmp(magic, kIndexMagic, 4) != 0) {
        throw FormatError("bad magic in " + path.string());
    }
    const std::uint32_t version = get_u32("version");
    if (version != kIndexVersion) {
        throw FormatError("unsupported index version " + std::to_string(version));
    }
    unsigned char cnt[8];
    need(reinterpret_cast<char*>(cnt), 8, "row count");
    std::uint64_t count = 0;
    for (int i = 7; i >= 0; --i) {
        count = (count << 8) | cnt[i];
    }
    const std::uint32_t dim = get_u32("dim");
    if (dim < 1) {
        throw FormatError("index dim must be positive");
    }
    FlatIndex index;
    index.dim_ = static_cast<int>(dim);
    index.ids_.reserve(count);
    index.rows_.reserve(count * dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t id_len = get_u32("doc id length");
        std::string id(id_len, '\0');
        need(id.data(), id_len, "doc id");
        std::vector<float> r(dim);
        need(reinterpret_cast<char*>(r.data()), dim * sizeof(float), "row data");
        const double norm = norm_of(r);
        if (std::abs(norm - 1.0) > 1e-6) {
            throw FormatError("row for doc '" + id + "' is not unit norm");
        }
        if (!index.ids_.empty() && id <= index.ids_.back()) {
            throw FormatError("doc ids out of order in " + path.string());
        }
        index.ids_.push_back(std::move(id));
        index.rows_.insert(index.rows_.end(), r.begin(), r.end());
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after last row in " + path.string());
    }
    return index;
}

} // namespace cooprag
