#pragma once

// httplib-backed chat client. Include this header (once, in the binary that
// needs HTTP) to get the HttpProvider method definitions.

#include <chrono>

#include <httplib.h>

#include "reflex/provider.hpp"

namespace reflex {

inline HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {}

inline Completion HttpProvider::complete(const ChatRequest& request) {
  check_request(request);

  nlohmann::json body;
  body["model"] = request.model_name;
  body["messages"] = nlohmann::json::array();
  for (const ChatMessage& m : request.messages) {
    body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  }

  httplib::Headers headers;
  if (!config_.auth_token_env.empty()) {
    if (const char* token = std::getenv(config_.auth_token_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  std::string last_error;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);

    auto start = std::chrono::steady_clock::now();
    httplib::Result res = client.Post(config_.path, headers, body.dump(), "application/json");
    auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start);

    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "http status " + std::to_string(res->status);
      continue;
    }

    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("unparseable provider response: ") + e.what());
    }
    const nlohmann::json* text = json_at_path(parsed, config_.text_path);
    if (!text || !text->is_string()) {
      throw TransportError("provider response missing text at path " + config_.text_path);
    }

    Completion c;
    c.text = text->get<std::string>();
    c.usage.wall_time_s = elapsed.count();
    std::string request_text;
    for (const ChatMessage& m : request.messages) request_text += m.content;
    const nlohmann::json* in_tok = json_at_path(parsed, config_.input_tokens_path);
    const nlohmann::json* out_tok = json_at_path(parsed, config_.output_tokens_path);
    c.usage.input_tokens = (in_tok && in_tok->is_number())
                               ? in_tok->get<std::int64_t>()
                               : token_estimate(request_text);
    c.usage.output_tokens =
        (out_tok && out_tok->is_number()) ? out_tok->get<std::int64_t>() : token_estimate(c.text);
    return c;
  }
  throw TransportError("complete failed after " + std::to_string(config_.retries + 1) +
                       " attempts: " + last_error);
}

}  // namespace reflex
