#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cooprag/embedding.hpp"
#include "cooprag/gateway.hpp"

namespace cooprag {

HttpEncoderProvider::HttpEncoderProvider(HttpEncoderConfig config) : config_(std::move(config)) {
    limiter_ = std::make_shared<InFlightLimiter>(config_.max_in_flight);
}

HttpEncoderProvider::~HttpEncoderProvider() = default;

LayeredEmbeddings HttpEncoderProvider::encode_raw(const std::string& text) {
    const auto guard = limiter_->acquire();

    httplib::Client client(config_.base_url);
    client.set_connection_timeout(0, config_.timeout_ms * 1000LL);
    client.set_read_timeout(0, config_.timeout_ms * 1000LL);
    client.set_write_timeout(0, config_.timeout_ms * 1000LL);

    nlohmann::json body;
    body["text"] = text;
    body["output_hidden_states"] = true;

    auto res = client.Post(config_.path, body.dump(), "application/json");
    if (!res) {
        throw ProviderUnavailable("encoder unreachable at " + config_.base_url + ": " +
                                  httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw ProviderUnavailable("encoder returned status " + std::to_string(res->status));
    }

    try {
        const auto parsed = nlohmann::json::parse(res->body);
        const auto& states = parsed.at("hidden_states");
        if (!states.is_array() || states.empty()) {
            throw ProviderUnavailable("encoder response has no hidden states");
        }
        const int layers = static_cast<int>(states.size());
        const int tokens = static_cast<int>(states.at(0).size());
        if (tokens == 0) throw ProviderUnavailable("encoder response has no tokens");
        const int dim = static_cast<int>(states.at(0).at(0).size());
        if (dim == 0) throw ProviderUnavailable("encoder response has zero-dim vectors");

        std::vector<float> data;
        data.reserve(static_cast<std::size_t>(layers) * tokens * dim);
        for (const auto& layer : states) {
            if (static_cast<int>(layer.size()) != tokens) {
                throw ProviderUnavailable("encoder layers disagree on token count");
            }
            for (const auto& tok : layer) {
                if (static_cast<int>(tok.size()) != dim) {
                    throw ProviderUnavailable("encoder tokens disagree on dimension");
                }
                for (const auto& v : tok) data.push_back(v.get<float>());
            }
        }
        return LayeredEmbeddings(layers, tokens, dim, std::move(data));
    } catch (const nlohmann::json::exception& e) {
        throw ProviderUnavailable(std::string("malformed encoder response: ") + e.what());
    }
}

} // namespace cooprag
