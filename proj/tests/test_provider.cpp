#include <doctest.h>

#include <cstdio>
#include <thread>

#include "reflex/provider.hpp"
#include "reflex/provider_http.hpp"
#include "test_util.hpp"

using namespace reflex;

TEST_CASE("token estimate is ceil(len/4)") {
  CHECK(token_estimate("") == 0);
  CHECK(token_estimate("SAFE") == 1);
  CHECK(token_estimate("12345") == 2);
  CHECK(token_estimate(std::string(400, 'x')) == 100);
}

TEST_CASE("mock provider replays scripted replies with synthesized usage") {
  MockProvider provider({{StageTag::SELF_CHECK, "", "SAFE"}});
  ChatRequest req;
  req.messages = {{"user", "is this safe? 0123456789"}};
  req.stage_tag = StageTag::SELF_CHECK;
  auto c = provider.complete(req);
  CHECK(c.text == "SAFE");
  CHECK(c.usage.output_tokens == 1);
  CHECK(c.usage.input_tokens == token_estimate("is this safe? 0123456789"));
}

TEST_CASE("mock provider matches by stage and substring") {
  MockProvider provider({
      {StageTag::REFLECTION, "beta", "reply-for-beta"},
      {StageTag::REFLECTION, "alpha", "reply-for-alpha"},
  });
  ChatRequest req;
  req.stage_tag = StageTag::REFLECTION;
  req.messages = {{"user", "please fix alpha now"}};
  CHECK(provider.complete(req).text == "reply-for-alpha");
  req.messages = {{"user", "please fix beta now"}};
  CHECK(provider.complete(req).text == "reply-for-beta");
}

TEST_CASE("empty messages violate the precondition") {
  MockProvider provider({{StageTag::SELF_CHECK, "", "SAFE"}});
  ChatRequest req;
  CHECK_THROWS_AS(provider.complete(req), std::invalid_argument);
}

TEST_CASE("script exhaustion is a distinct error") {
  MockProvider provider({{StageTag::SELF_CHECK, "", "SAFE"}});
  ChatRequest req;
  req.messages = {{"user", "q"}};
  req.stage_tag = StageTag::SELF_CHECK;
  provider.complete(req);
  CHECK_THROWS_AS(provider.complete(req), ScriptExhaustedError);

  // Wrong stage also exhausts: no REFLECTION records exist.
  MockProvider p2({{StageTag::SELF_CHECK, "", "SAFE"}});
  req.stage_tag = StageTag::REFLECTION;
  CHECK_THROWS_AS(p2.complete(req), ScriptExhaustedError);
}

TEST_CASE("mock script loads from an ndjson file") {
  reflex_test::TempDir tmp("script");
  auto path = tmp.path() / "script.ndjson";
  {
    std::ofstream out(path);
    out << R"({"stage":"SELF_CHECK","reply":"UNSAFE"})" << "\n";
    out << R"({"stage":"REFLECTION","match":"sql","reply":"use params"})" << "\n";
  }
  auto provider = MockProvider::from_file(path);
  ChatRequest req;
  req.messages = {{"user", "check this sql please"}};
  req.stage_tag = StageTag::SELF_CHECK;
  CHECK(provider.complete(req).text == "UNSAFE");
  req.stage_tag = StageTag::REFLECTION;
  CHECK(provider.complete(req).text == "use params");
}

TEST_CASE("ledger totals are additive and sliceable by task") {
  UsageLedger ledger;
  ledger.add(StageTag::SELF_CHECK, "t1", ChatUsage{100, 10, 0.0});
  ledger.add(StageTag::REFLECTION, "t1", ChatUsage{900, 90, 0.0});
  ledger.add(StageTag::SELF_CHECK, "t2", ChatUsage{50, 5, 0.0});

  auto sc = ledger.stage_total(StageTag::SELF_CHECK);
  auto rf = ledger.stage_total(StageTag::REFLECTION);
  auto all = ledger.grand_total();
  CHECK(sc.total_tokens() == 165);
  CHECK(rf.total_tokens() == 990);
  CHECK(all.total_tokens() == sc.total_tokens() + rf.total_tokens() +
                                  ledger.stage_total(StageTag::VERIFY_ASSIST).total_tokens());
  CHECK(ledger.task_slice("t1").size() == 2);
  CHECK(ledger.task_slice("t2").size() == 1);
  CHECK(ledger.task_slice("t3").empty());
}

TEST_CASE("empty ledger totals are zero") {
  UsageLedger ledger;
  auto t = ledger.grand_total();
  CHECK(t.total_tokens() == 0);
  CHECK(t.calls == 0);
  CHECK(token_cost(0, 1.5e-3) == 0.0);
}

TEST_CASE("token cost matches the pricing rule") {
  // 44,762 tokens at 1.5e-3 per 1K.
  CHECK(token_cost(44762, 1.5e-3) == doctest::Approx(6.71e-2).epsilon(2e-3));
  CHECK(std::abs(token_cost(44762, 1.5e-3) - 6.71e-2) <= 1e-4);
}

TEST_CASE("dotted json paths resolve objects and array indices") {
  auto doc = nlohmann::json::parse(
      R"({"choices":[{"message":{"content":"hello"}}],"usage":{"prompt_tokens":7}})");
  auto* text = json_at_path(doc, "choices.0.message.content");
  REQUIRE(text != nullptr);
  CHECK(text->get<std::string>() == "hello");
  auto* tokens = json_at_path(doc, "usage.prompt_tokens");
  REQUIRE(tokens != nullptr);
  CHECK(tokens->get<int>() == 7);
  CHECK(json_at_path(doc, "choices.3.message") == nullptr);
  CHECK(json_at_path(doc, "nope") == nullptr);
}

TEST_CASE("http provider round-trips against a local server") {
  httplib::Server server;
  server.Post("/v1/chat/completions", [](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    std::string prompt = body["messages"][0]["content"];
    nlohmann::json reply{
        {"choices", {{{"message", {{"content", "echo: " + prompt}}}}}},
        {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 3}}},
    };
    res.set_content(reply.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpProviderConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  HttpProvider provider(cfg);
  ChatRequest req;
  req.messages = {{"user", "ping"}};
  req.model_name = "m";
  auto c = provider.complete(req);
  CHECK(c.text == "echo: ping");
  CHECK(c.usage.input_tokens == 11);
  CHECK(c.usage.output_tokens == 3);

  server.stop();
  server_thread.join();
}

TEST_CASE("http provider surfaces transport failure distinctly") {
  HttpProviderConfig cfg;
  cfg.base_url = "http://127.0.0.1:9";  // discard port: nothing listens
  cfg.timeout_s = 1;
  cfg.retries = 0;
  HttpProvider provider(cfg);
  ChatRequest req;
  req.messages = {{"user", "ping"}};
  CHECK_THROWS_AS(provider.complete(req), TransportError);
}
