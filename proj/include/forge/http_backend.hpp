#pragma once

#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "forge/backends.hpp"
#include "forge/error.hpp"
#include "forge/png_io.hpp"

namespace forge {

// Connection settings for a remote model deployment speaking the /v1
// protocol. The URL comes from --backend-url or ZSMLC_BACKEND_URL.
struct HttpBackendOptions {
    std::string base_url;
    double timeout_s = 30.0;
    int retry_budget = 2;  // extra attempts after the first
    std::vector<int> resolutions = {512, 560, 768};
    bool text_encoder_gradients = false;

    static HttpBackendOptions from_env() {
        HttpBackendOptions opt;
        if (const char* url = std::getenv("ZSMLC_BACKEND_URL")) opt.base_url = url;
        return opt;
    }
};

namespace http_detail {

// Small client pool: httplib clients are not safe for concurrent calls,
// so each request borrows one.
class ClientPool {
public:
    explicit ClientPool(const HttpBackendOptions& opt) : opt_(opt) {
        if (opt.base_url.empty())
            throw BackendError(BackendError::Kind::unreachable,
                               "no backend URL configured (set --backend-url or ZSMLC_BACKEND_URL)");
    }

    std::unique_ptr<httplib::Client> acquire() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (!idle_.empty()) {
                auto c = std::move(idle_.back());
                idle_.pop_back();
                return c;
            }
        }
        auto c = std::make_unique<httplib::Client>(opt_.base_url);
        auto secs = static_cast<time_t>(opt_.timeout_s);
        auto usecs = static_cast<time_t>((opt_.timeout_s - static_cast<double>(secs)) * 1e6);
        c->set_connection_timeout(secs, usecs);
        c->set_read_timeout(secs, usecs);
        c->set_write_timeout(secs, usecs);
        return c;
    }

    void release(std::unique_ptr<httplib::Client> c) {
        std::lock_guard<std::mutex> lock(mu_);
        idle_.push_back(std::move(c));
    }

    const HttpBackendOptions& options() const { return opt_; }

private:
    HttpBackendOptions opt_;
    std::mutex mu_;
    std::vector<std::unique_ptr<httplib::Client>> idle_;
};

inline httplib::Result post_with_retries(ClientPool& pool, const std::string& path, const std::string& body,
                                         const std::string& content_type) {
    const int attempts = 1 + std::max(0, pool.options().retry_budget);
    httplib::Error last = httplib::Error::Success;
    for (int i = 0; i < attempts; ++i) {
        auto client = pool.acquire();
        auto res = client->Post(path, body, content_type);
        pool.release(std::move(client));
        if (res) return res;
        last = res.error();
    }
    auto kind = (last == httplib::Error::ConnectionTimeout || last == httplib::Error::Read ||
                 last == httplib::Error::Write)
                    ? BackendError::Kind::timeout
                    : BackendError::Kind::unreachable;
    throw BackendError(kind, "backend " + path + " failed: " + httplib::to_string(last));
}

inline nlohmann::json parse_json_response(const httplib::Result& res, const std::string& path) {
    if (res->status != 200)
        throw BackendError(BackendError::Kind::bad_response,
                           "backend " + path + " returned HTTP " + std::to_string(res->status));
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(BackendError::Kind::bad_response, "backend " + path + ": " + e.what());
    }
}

}  // namespace http_detail

class HttpTextToImage : public TextToImageBackend {
public:
    explicit HttpTextToImage(std::shared_ptr<http_detail::ClientPool> pool) : pool_(std::move(pool)) {}
    explicit HttpTextToImage(const HttpBackendOptions& opt)
        : pool_(std::make_shared<http_detail::ClientPool>(opt)) {}

    std::vector<int> supported_resolutions() const override { return pool_->options().resolutions; }
    bool supports_text_encoder_gradients() const override { return pool_->options().text_encoder_gradients; }

    Image generate(const std::string& prompt, int resolution, std::uint64_t seed) override {
        check_resolution(*this, resolution);
        nlohmann::json req;
        req["prompt"] = prompt;
        req["width"] = resolution;
        req["height"] = resolution;
        req["seed"] = seed;
        auto res = http_detail::post_with_retries(*pool_, "/v1/generate", req.dump(), "application/json");
        if (res->status != 200)
            throw BackendError(BackendError::Kind::bad_response,
                               "generate returned HTTP " + std::to_string(res->status));
        return png::decode(reinterpret_cast<const std::uint8_t*>(res->body.data()), res->body.size());
    }

private:
    std::shared_ptr<http_detail::ClientPool> pool_;
};

class HttpEmbedder : public VisionLanguageEmbedder {
public:
    explicit HttpEmbedder(std::shared_ptr<http_detail::ClientPool> pool) : pool_(std::move(pool)) {}
    explicit HttpEmbedder(const HttpBackendOptions& opt)
        : pool_(std::make_shared<http_detail::ClientPool>(opt)) {}

    std::size_t embedding_dim() const override {
        if (dim_ == 0)
            const_cast<HttpEmbedder*>(this)->embed_text("dimension probe");
        return dim_;
    }

    std::vector<double> embed_image(const Image& image) override {
        auto bytes = png::encode(image);
        auto res = http_detail::post_with_retries(
            *pool_, "/v1/embed_image", std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
            "image/png");
        return take_vector(res, "/v1/embed_image");
    }

    std::vector<double> embed_text(const std::string& text) override {
        nlohmann::json req;
        req["text"] = text;
        auto res = http_detail::post_with_retries(*pool_, "/v1/embed_text", req.dump(), "application/json");
        return take_vector(res, "/v1/embed_text");
    }

private:
    std::vector<double> take_vector(const httplib::Result& res, const std::string& path) {
        auto j = http_detail::parse_json_response(res, path);
        auto v = j.at("vector").get<std::vector<double>>();
        if (v.empty()) throw BackendError(BackendError::Kind::bad_response, path + ": empty vector");
        if (dim_ == 0) dim_ = v.size();
        if (v.size() != dim_)
            throw BackendError(BackendError::Kind::bad_response, path + ": embedding dimension changed");
        return v;
    }

    std::shared_ptr<http_detail::ClientPool> pool_;
    std::size_t dim_ = 0;
};

class HttpLlm : public InstructionLLMBackend {
public:
    explicit HttpLlm(std::shared_ptr<http_detail::ClientPool> pool) : pool_(std::move(pool)) {}
    explicit HttpLlm(const HttpBackendOptions& opt) : pool_(std::make_shared<http_detail::ClientPool>(opt)) {}

    std::vector<std::string> complete(const std::string& instruction, int n) override {
        nlohmann::json req;
        req["instruction"] = instruction;
        req["n"] = n;
        auto res = http_detail::post_with_retries(*pool_, "/v1/complete", req.dump(), "application/json");
        auto j = http_detail::parse_json_response(res, "/v1/complete");
        auto texts = j.at("texts").get<std::vector<std::string>>();
        if (static_cast<int>(texts.size()) != n)
            throw BackendError(BackendError::Kind::bad_response,
                               "complete returned " + std::to_string(texts.size()) + " texts, wanted " +
                                   std::to_string(n));
        for (const auto& t : texts)
            if (t.empty()) throw BackendError(BackendError::Kind::bad_response, "complete returned empty text");
        return texts;
    }

private:
    std::shared_ptr<http_detail::ClientPool> pool_;
};

// All three roles over one pool.
struct HttpBackendSuite {
    std::shared_ptr<http_detail::ClientPool> pool;
    HttpTextToImage generator;
    HttpEmbedder embedder;
    HttpLlm llm;

    explicit HttpBackendSuite(const HttpBackendOptions& opt)
        : pool(std::make_shared<http_detail::ClientPool>(opt)), generator(pool), embedder(pool), llm(pool) {}
};

}  // namespace forge
