#include "cooprag/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cooprag/hash.hpp"

namespace cooprag {

namespace {

void check_shape(int layers, int tokens, int dim) {
    if (layers < 1) {
        throw InvariantViolation("embeddings need at least one layer");
    }
    if (tokens < 1) {
        throw InvariantViolation("embeddings need at least one token (CLS)");
    }
    if (dim < 1) {
        throw InvariantViolation("embedding dim must be positive");
    }
}

} // namespace

LayeredEmbeddings::LayeredEmbeddings(int layers, int tokens, int dim)
    : layers_(layers), tokens_(tokens), dim_(dim) {
    check_shape(layers, tokens, dim);
    data_.assign(static_cast<std::size_t>(layers) * tokens * dim, 0.0f);
}

LayeredEmbeddings::LayeredEmbeddings(int layers, int tokens, int dim, std::vector<float> data)
    : layers_(layers), tokens_(tokens), dim_(dim), data_(std::move(data)) {
    check_shape(layers, tokens, dim);
    const auto expected = static_cast<std::size_t>(layers) * tokens * dim;
    if (data_.size() != expected) {
        throw InvariantViolation("embedding data size does not match its shape");
    }
    for (float v : data_) {
        if (!std::isfinite(v)) {
            throw InvariantViolation("embedding entries must be finite");
        }
    }
}

std::size_t LayeredEmbeddings::offset(int layer, int token_index) const {
    if (layer < 1 || layer > layers_) {
        throw LayerOutOfRange("layer " + std::to_string(layer) + " outside 1.." +
                              std::to_string(layers_));
    }
    if (token_index < 0 || token_index >= tokens_) {
        throw IndexOutOfRange("token " + std::to_string(token_index) + " outside 0.." +
                              std::to_string(tokens_ - 1));
    }
    return (static_cast<std::size_t>(layer - 1) * tokens_ + token_index) * dim_;
}

std::span<const float> LayeredEmbeddings::token(int layer, int token_index) const {
    return {data_.data() + offset(layer, token_index), static_cast<std::size_t>(dim_)};
}

std::span<float> LayeredEmbeddings::token_mut(int layer, int token_index) {
    return {data_.data() + offset(layer, token_index), static_cast<std::size_t>(dim_)};
}

LayeredEmbeddings LayeredEmbeddings::truncated(int tokens) const {
    if (tokens >= tokens_) {
        return *this;
    }
    if (tokens < 1) {
        throw InvariantViolation("cannot truncate below one token");
    }
    LayeredEmbeddings out(layers_, tokens, dim_);
    for (int l = 1; l <= layers_; ++l) {
        for (int t = 0; t < tokens; ++t) {
            auto src = token(l, t);
            auto dst = out.token_mut(l, t);
            std::copy(src.begin(), src.end(), dst.begin());
        }
    }
    return out;
}

std::vector<float> cls_vector(const LayeredEmbeddings& e, int layer) {
    auto row = e.cls(layer);
    return {row.begin(), row.end()};
}

void EmbeddingStore::insert(std::string doc_id, LayeredEmbeddings emb) {
    if (doc_id.empty()) {
        throw InvariantViolation("doc id must be non-empty");
    }
    if (docs_.count(doc_id)) {
        throw InvariantViolation("duplicate doc id: " + doc_id);
    }
    if (!docs_.empty()) {
        const auto& first = docs_.begin()->second;
        if (emb.layers() != first.layers() || emb.dim() != first.dim()) {
            throw DimMismatch("store entries must share layer count and dim; got (" +
                              std::to_string(emb.layers()) + "," + std::to_string(emb.dim()) +
                              ") vs (" + std::to_string(first.layers()) + "," +
                              std::to_string(first.dim()) + ")");
        }
    }
    if (meta_.layers == 0) {
        meta_.layers = emb.layers();
        meta_.dim = emb.dim();
    }
    docs_.emplace(std::move(doc_id), std::move(emb));
}

const LayeredEmbeddings& EmbeddingStore::at(const std::string& doc_id) const {
    auto it = docs_.find(doc_id);
    if (it == docs_.end()) {
        throw UnknownDocId("no embeddings for doc id: " + doc_id);
    }
    return it->second;
}

const LayeredEmbeddings* EmbeddingStore::find(const std::string& doc_id) const {
    auto it = docs_.find(doc_id);
    return it == docs_.end() ? nullptr : &it->second;
}

namespace {

constexpr char kStoreMagic[4] = {'C', 'R', 'L', 'E'};
constexpr std::uint32_t kStoreVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& out, const float* data, std::size_t count) {
    // Raw write assumes a little-endian host with IEEE binary32 floats.
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(float)));
}

void need(std::istream& in, char* dst, std::size_t count, const char* what) {
    in.read(dst, static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) {
        throw TruncatedFile(std::string("file ends inside ") + what);
    }
}

std::uint16_t get_u16(std::istream& in, const char* what) {
    unsigned char b[2];
    need(in, reinterpret_cast<char*>(b), 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    need(in, reinterpret_cast<char*>(b), 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

std::uint64_t get_u64(std::istream& in, const char* what) {
    unsigned char b[8];
    need(in, reinterpret_cast<char*>(b), 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

void write_doc(std::ostream& out, const std::string& id, const LayeredEmbeddings& emb) {
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    put_u16(out, static_cast<std::uint16_t>(emb.layers()));
    put_u32(out, static_cast<std::uint32_t>(emb.tokens()));
    put_u32(out, static_cast<std::uint32_t>(emb.dim()));
    put_f32(out, emb.data().data(), emb.data().size());
}

std::pair<std::string, LayeredEmbeddings> read_doc(std::istream& in) {
    const std::uint32_t id_len = get_u32(in, "doc id length");
    std::string id(id_len, '\0');
    need(in, id.data(), id_len, "doc id");
    const int layers = get_u16(in, "layer count");
    const std::uint32_t tokens = get_u32(in, "token count");
    const std::uint32_t dim = get_u32(in, "dim");
    if (layers < 1 || tokens < 1 || dim < 1) {
        throw FormatError("doc '" + id + "' has a degenerate shape");
    }
    const std::size_t count = static_cast<std::size_t>(layers) * tokens * dim;
    std::vector<float> data(count);
    need(in, reinterpret_cast<char*>(data.data()), count * sizeof(float), "embedding data");
    return {std::move(id),
            LayeredEmbeddings(layers, static_cast<int>(tokens), static_cast<int>(dim),
                              std::move(data))};
}

} // namespace

void save_store(const EmbeddingStore& store, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out.write(kStoreMagic, 4);
    put_u32(out, kStoreVersion);
    put_u64(out, store.size());
    for (const auto& [id, emb] : store.docs()) {
        write_doc(out, id, emb);
    }
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

EmbeddingStore load_store(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path.string());
    }
    char magic[4];
    need(in, magic, 4, "magic");
    if (std::memcmp(magic, kStoreMagic, 4) != 0) {
        throw FormatError("bad magic in " + path.string());
    }
    const std::uint32_t version = get_u32(in, "version");
    if (version != kStoreVersion) {
        throw FormatError("unsupported store version " + std::to_string(version));
    }
    const std::uint64_t count = get_u64(in, "doc count");
    EmbeddingStore store;
    for (std::uint64_t i = 0; i < count; ++i) {
        auto [id, emb] = read_doc(in);
        store.insert(std::move(id), std::move(emb));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after last doc in " + path.string());
    }
    return store;
}

LayeredEmbeddings encode(const std::string& text, EncoderProvider& provider, int max_seq_len) {
    if (text.empty()) {
        throw EmptyText("cannot encode empty text");
    }
    if (max_seq_len < 1) {
        throw InvariantViolation("max sequence length must be positive");
    }
    return provider.encode_raw(text).truncated(max_seq_len);
}

FixtureEncoderProvider::FixtureEncoderProvider(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!std::filesystem::is_directory(dir_)) {
        throw ProviderUnavailable("fixture directory does not exist: " + dir_.string());
    }
}

std::filesystem::path FixtureEncoderProvider::fixture_path(const std::filesystem::path& dir,
                                                           const std::string& text) {
    return dir / (to_hex(fnv1a64(text)) + ".emb");
}

void FixtureEncoderProvider::write_fixture(const std::filesystem::path& dir,
                                           const std::string& text,
                                           const LayeredEmbeddings& emb) {
    std::filesystem::create_directories(dir);
    EmbeddingStore one;
    one.insert("fixture", emb);
    save_store(one, fixture_path(dir, text));
}

LayeredEmbeddings FixtureEncoderProvider::encode_raw(const std::string& text) {
    const auto path = fixture_path(dir_, text);
    if (!std::filesystem::exists(path)) {
        throw ProviderUnavailable("no embedding fixture for text hash " + to_hex(fnv1a64(text)) +
                                  " (text starts: " + text.substr(0, 60) + ")");
    }
    return load_store(path).at("fixture");
}

} // namespace cooprag
