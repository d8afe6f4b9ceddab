#pragma once

// In-process HTTP server exposing the toy backends over the /v1 protocol;
// lets the client classes be tested against a live endpoint.

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "forge/png_io.hpp"
#include "forge/toy_world.hpp"

namespace forge::testing {

class ToyBackendServer {
public:
    explicit ToyBackendServer(const LabelSpace& labels, double miss_rate = 0.0)
        : world_(labels, 64, miss_rate), llm_(labels, 7) {
        server_.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
            ++request_count;
            if (fail_next_requests > 0) {
                --fail_next_requests;
                res.status = 500;
                return;
            }
            auto j = nlohmann::json::parse(req.body);
            Image img = world_.generate(j.at("prompt").get<std::string>(), j.at("width").get<int>(),
                                        j.at("seed").get<std::uint64_t>());
            auto bytes = png::encode(img);
            res.set_content(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()), "image/png");
        });
        server_.Post("/v1/embed_image", [this](const httplib::Request& req, httplib::Response& res) {
            ++request_count;
            Image img = png::decode(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size());
            nlohmann::json out;
            out["vector"] = world_.embed_image(img);
            res.set_content(out.dump(), "application/json");
        });
        server_.Post("/v1/embed_text", [this](const httplib::Request& req, httplib::Response& res) {
            ++request_count;
            auto j = nlohmann::json::parse(req.body);
            nlohmann::json out;
            out["vector"] = world_.embed_text(j.at("text").get<std::string>());
            res.set_content(out.dump(), "application/json");
        });
        server_.Post("/v1/complete", [this](const httplib::Request& req, httplib::Response& res) {
            ++request_count;
            auto j = nlohmann::json::parse(req.body);
            if (sleep_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms.load()));
            nlohmann::json out;
            out["texts"] = llm_.complete(j.at("instruction").get<std::string>(), j.at("n").get<int>());
            res.set_content(out.dump(), "application/json");
        });

        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~ToyBackendServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    ToyGlyphWorld& world() { return world_; }

    std::atomic<int> request_count{0};
    std::atomic<int> fail_next_requests{0};
    std::atomic<int> sleep_ms{0};

private:
    ToyGlyphWorld world_;
    ToyInstructionLlm llm_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace forge::testing
