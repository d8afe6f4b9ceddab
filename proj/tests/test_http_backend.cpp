#include <catch2/catch_amalgamated.hpp>

#include "forge/http_backend.hpp"
#include "toy_server.hpp"

using namespace forge;

namespace {

LabelSpace toy_labels() {
    return LabelSpace({"cat", "dog"}, {"zebra", "kite"});
}

HttpBackendOptions options_for(const testing::ToyBackendServer& server) {
    HttpBackendOptions opt;
    opt.base_url = server.url();
    opt.timeout_s = 2.0;
    opt.retry_budget = 1;
    opt.resolutions = {64};
    return opt;
}

}  // namespace

TEST_CASE("http generate returns the requested resolution and is reproducible") {
    testing::ToyBackendServer server(toy_labels());
    HttpBackendSuite suite(options_for(server));

    Image a = suite.generator.generate("a zebra next to a kite", 64, 11);
    CHECK(a.width == 64);
    CHECK(a.height == 64);
    Image b = suite.generator.generate("a zebra next to a kite", 64, 11);
    CHECK(a.rgb == b.rgb);

    // the wire image decodes to the same thing the local world renders
    Image local = server.world().generate("a zebra next to a kite", 64, 11);
    CHECK(a.rgb == local.rgb);

    CHECK_THROWS_AS(suite.generator.generate("a zebra", 999, 1), BackendError);
}

TEST_CASE("http embeddings match the local toy embedder") {
    testing::ToyBackendServer server(toy_labels());
    HttpBackendSuite suite(options_for(server));

    Image img = server.world().generate("a kite", 64, 3);
    auto remote = suite.embedder.embed_image(img);
    auto local = server.world().embed_image(img);
    REQUIRE(remote.size() == local.size());
    for (std::size_t i = 0; i < remote.size(); ++i) CHECK(remote[i] == Catch::Approx(local[i]).epsilon(1e-12));

    CHECK(suite.embedder.embed_text("zebra") == server.world().embed_text("zebra"));
    CHECK(suite.embedder.embedding_dim() == server.world().embedding_dim());
}

TEST_CASE("http llm returns exactly n texts") {
    testing::ToyBackendServer server(toy_labels());
    HttpBackendSuite suite(options_for(server));
    auto texts = suite.llm.complete("write about a zebra and a kite", 4);
    REQUIRE(texts.size() == 4);
    for (const auto& t : texts) CHECK_FALSE(t.empty());
}

TEST_CASE("unreachable backend surfaces a typed error") {
    HttpBackendOptions opt;
    opt.base_url = "http://127.0.0.1:1";  // nothing listens there
    opt.timeout_s = 0.2;
    opt.retry_budget = 0;
    HttpTextToImage gen(opt);
    opt.resolutions = {64};
    try {
        HttpTextToImage g2(opt);
        g2.generate("a zebra", 64, 1);
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK((e.kind == BackendError::Kind::unreachable || e.kind == BackendError::Kind::timeout));
    }
}

TEST_CASE("missing configuration is rejected up front") {
    HttpBackendOptions opt;  // no URL
    CHECK_THROWS_AS(HttpTextToImage{opt}, BackendError);
}

TEST_CASE("server errors become bad_response, not silent retries beyond budget") {
    testing::ToyBackendServer server(toy_labels());
    auto opt = options_for(server);
    opt.retry_budget = 0;
    HttpBackendSuite suite(opt);

    server.fail_next_requests = 1;
    CHECK_THROWS_AS(suite.generator.generate("a zebra", 64, 1), BackendError);

    // with budget 2, a single transient 500 plus... the 500 is an HTTP
    // response, not a transport error: it must NOT be retried
    auto opt2 = options_for(server);
    opt2.retry_budget = 3;
    HttpBackendSuite suite2(opt2);
    server.fail_next_requests = 1;
    int before = server.request_count;
    CHECK_THROWS_AS(suite2.generator.generate("a zebra", 64, 1), BackendError);
    CHECK(server.request_count == before + 1);
}

TEST_CASE("slow responses surface as timeouts") {
    testing::ToyBackendServer server(toy_labels());
    auto opt = options_for(server);
    opt.timeout_s = 0.3;
    opt.retry_budget = 0;
    HttpBackendSuite suite(opt);
    server.sleep_ms = 1500;
    try {
        suite.llm.complete("about a zebra", 1);
        FAIL("expected timeout");
    } catch (const BackendError& e) {
        CHECK(e.kind == BackendError::Kind::timeout);
    }
    server.sleep_ms = 0;
}
