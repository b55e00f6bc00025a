#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cooprag/errors.hpp"

namespace cooprag {

// All-layer, all-token hidden states for one text. Layers are 1-based with
// layer L == layers() being the encoder's final layer; token 0 is CLS on
// every layer. States are kept raw (un-normalized); similarity code
// normalizes on the fly, and the layer-distance scoring variant needs the
// raw magnitudes.
class LayeredEmbeddings {
public:
    LayeredEmbeddings(int layers, int tokens, int dim);
    LayeredEmbeddings(int layers, int tokens, int dim, std::vector<float> data);

    int layers() const { return layers_; }
    int tokens() const { return tokens_; }
    int dim() const { return dim_; }

    std::span<const float> token(int layer, int token_index) const;
    std::span<float> token_mut(int layer, int token_index);
    std::span<const float> cls(int layer) const { return token(layer, 0); }

    // First `tokens` positions of every layer (CLS always survives).
    LayeredEmbeddings truncated(int tokens) const;

    const std::vector<float>& data() const { return data_; }

    bool operator==(const LayeredEmbeddings&) const = default;

private:
    std::size_t offset(int layer, int token_index) const;

    int layers_;
    int tokens_;
    int dim_;
    std::vector<float> data_; // [layer][token][dim] row-major
};

// Copy of row [layer][0][:]. Layer must be in 1..layers().
std::vector<float> cls_vector(const LayeredEmbeddings& e, int layer);

struct StoreMetadata {
    std::string encoder_name;
    int layers = 0;
    int dim = 0;
    int max_seq_len = 0;

    bool operator==(const StoreMetadata&) const = default;
};

class EmbeddingStore {
public:
    EmbeddingStore() = default;
    explicit EmbeddingStore(StoreMetadata meta) : meta_(std::move(meta)) {}

    // Rejects duplicate ids and entries whose layer count or dim disagree
    // with documents already present.
    void insert(std::string doc_id, LayeredEmbeddings emb);

    bool contains(const std::string& doc_id) const { return docs_.count(doc_id) != 0; }
    const LayeredEmbeddings& at(const std::string& doc_id) const;
    const LayeredEmbeddings* find(const std::string& doc_id) const;

    std::size_t size() const { return docs_.size(); }
    bool empty() const { return docs_.empty(); }

    // Sorted by doc id, which makes every store traversal deterministic.
    const std::map<std::string, LayeredEmbeddings>& docs() const { return docs_; }
    const StoreMetadata& metadata() const { return meta_; }

    bool operator==(const EmbeddingStore&) const = default;

private:
    StoreMetadata meta_;
    std::map<std::string, LayeredEmbeddings> docs_;
};

void save_store(const EmbeddingStore& store, const std::filesystem::path& path);
EmbeddingStore load_store(const std::filesystem::path& path);

class EncoderProvider {
public:
    virtual ~EncoderProvider() = default;

    // Full hidden-state stack for the text, before any truncation.
    virtual LayeredEmbeddings encode_raw(const std::string& text) = 0;
    virtual std::string name() const = 0;
};

inline constexpr int kDefaultMaxSeqLen = 512;

// Encodes text through the provider and truncates the token axis to
// max_seq_len. Throws EmptyText before touching the provider.
LayeredEmbeddings encode(const std::string& text, EncoderProvider& provider,
                         int max_seq_len = kDefaultMaxSeqLen);

// Deterministic file-backed provider: each text maps to <fnv1a64(text)>.emb
// inside the fixture directory, stored as a one-document store file.
class FixtureEncoderProvider : public EncoderProvider {
public:
    explicit FixtureEncoderProvider(std::filesystem::path dir);

    LayeredEmbeddings encode_raw(const std::string& text) override;
    std::string name() const override { return "fixture"; }

    static std::filesystem::path fixture_path(const std::filesystem::path& dir,
                                              const std::string& text);
    static void write_fixture(const std::filesystem::path& dir, const std::string& text,
                              const LayeredEmbeddings& emb);

private:
    std::filesystem::path dir_;
};

struct HttpEncoderConfig {
    std::string base_url;       // e.g. http://127.0.0.1:8900
    std::string path = "/embed";
    int timeout_ms = 30000;
    int max_in_flight = 4;
};

class InFlightLimiter;

// Client for an embedding service that returns every hidden layer:
// POST {"text": ..., "output_hidden_states": true} -> {"hidden_states": [[[...]]]}
// with hidden_states indexed [layer][token][dim], layers 1..L in order.
class HttpEncoderProvider : public EncoderProvider {
public:
    explicit HttpEncoderProvider(HttpEncoderConfig config);
    ~HttpEncoderProvider() override;

    LayeredEmbeddings encode_raw(const std::string& text) override;
    std::string name() const override { return "http:" + config_.base_url; }

private:
    HttpEncoderConfig config_;
    std::shared_ptr<InFlightLimiter> limiter_;
};

} // namespace cooprag
