#pragma once

#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "clarify/api_schema.hpp"
#include "clarify/corpus/scene.hpp"
#include "clarify/corpus/synthetic.hpp"
#include "clarify/dialogue.hpp"
#include "clarify/errors.hpp"
#include "clarify/grounding.hpp"
#include "clarify/image.hpp"
#include "clarify/rng.hpp"

namespace clarify {

class ApiError : public Error {
 public:
  ApiError(int http_status, std::string code, const std::string& message)
      : Error(message), http_status_(http_status), code_(std::move(code)) {}

  int http_status() const { return http_status_; }
  const std::string& code() const { return code_; }

  nlohmann::json body() const { return {{"error", {{"code", code_}, {"message", what()}}}}; }

 private:
  int http_status_;
  std::string code_;
};

// One API code per dialogue failure.
inline ApiError api_error_for(const DialogueError& e) {
  switch (e.code()) {
    case DialogueErrorCode::ProtocolViolation: return {409, "protocol_violation", e.what()};
    case DialogueErrorCode::NotResolved: return {409, "not_resolved", e.what()};
    case DialogueErrorCode::AlreadyCommitted: return {409, "already_committed", e.what()};
    case DialogueErrorCode::EmptyInstruction: return {422, "empty_instruction", e.what()};
    case DialogueErrorCode::NoAmbiguity: return {500, "no_ambiguity", e.what()};
    case DialogueErrorCode::EmptyScene: return {422, "empty_scene", e.what()};
  }
  return {500, "internal_error", e.what()};
}

struct GatewayConfig {
  DialogueConfig dialogue;
  std::chrono::milliseconds idle_timeout = std::chrono::minutes(30);
  std::uint64_t seed = 0;  // session ids and synthetic scene defaults
  bool thumbnails = true;
};

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

// Port from CLARIFY_PORT when set, else `fallback`.
inline int resolve_port(int fallback) {
  const char* env = std::getenv("CLARIFY_PORT");
  if (!env || !*env) return fallback;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 0 || v > 65535) throw ConfigError(std::string("CLARIFY_PORT is not a port: '") + env + "'");
  return static_cast<int>(v);
}

namespace detail {

inline nlohmann::json box_json(const Scene& s) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t k = 0; k < s.boxes.size(); ++k) {
    out.push_back({{"box_id", k}, {"name", std::string(region_name(static_cast<int>(k)))}, {"bbox", bbox_to_json(s.boxes[k])}});
  }
  return out;
}

inline nlohmann::json thumbnail_json(const Scene& s, const BoundingBox& b) {
  if (!s.image) return nullptr;
  const int x0 = static_cast<int>(std::floor(b.x_min)), y0 = static_cast<int>(std::floor(b.y_min));
  const int x1 = static_cast<int>(std::ceil(b.x_max)), y1 = static_cast<int>(std::ceil(b.y_max));
  try {
    return base64_encode(encode_png(s.image->crop(x0, y0, x1, y1)));
  } catch (const ValidationError&) {
    return nullptr;  // box lies outside the raster
  }
}

inline nlohmann::json scene_summary(const Scene& s, bool thumbnails) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"object_id", o.object_id},
                       {"bbox", bbox_to_json(o.bbox)},
                       {"thumbnail_png_base64", thumbnails ? thumbnail_json(s, o.bbox) : nlohmann::json(nullptr)}});
  }
  return {{"scene_id", s.scene_id}, {"width", s.width}, {"height", s.height}, {"boxes", box_json(s)}, {"objects", objects}};
}

inline nlohmann::json scene_document(const Scene& s) {
  return {{"scene", scene_to_json(s)},
          {"image_png_base64", s.image ? nlohmann::json(base64_encode(encode_png(*s.image))) : nlohmann::json(nullptr)}};
}

inline ApiError bad_request(const std::string& message) { return {400, "invalid_request", message}; }

inline void only_keys(const nlohmann::json& body, const std::set<std::string>& allowed) {
  for (const auto& [k, v] : body.items()) {
    if (!allowed.count(k)) throw bad_request("unknown field '" + k + "'");
  }
}

}  // namespace detail

// Session service. Routing is transport-independent through handle(); mount()
// puts it behind an httplib server. The model is shared and never mutated.
class Gateway {
 public:
  using Clock = std::chrono::steady_clock;

  Gateway(std::shared_ptr<const GroundingModel> model, std::vector<Scene> scenes, GatewayConfig cfg = {},
          std::function<Clock::time_point()> now = Clock::now)
      : model_(std::move(model)), cfg_(cfg), now_(std::move(now)), ids_(cfg.seed ^ 0x5E55105ULL) {
    if (!model_) throw ConfigError("gateway needs a model");
    if (cfg_.idle_timeout.count() <= 0) throw ConfigError("idle timeout must be positive");
    for (auto& s : scenes) {
      const std::string id = s.scene_id;
      if (!scenes_.emplace(id, std::move(s)).second) throw ConfigError("duplicate scene id '" + id + "'");
    }
  }

  const GatewayConfig& config() const { return cfg_; }

  std::size_t live_sessions() const {
    std::lock_guard lock(registry_mutex_);
    return sessions_.size();
  }

  HttpResponse handle(const std::string& method, const std::string& path,
                      const std::multimap<std::string, std::string>& query, const std::string& body) {
    try {
      return route(method, path, query, body);
    } catch (const ApiError& e) {
      return {e.http_status(), e.body()};
    } catch (const DialogueError& e) {
      const ApiError a = api_error_for(e);
      return {a.http_status(), a.body()};
    } catch (const std::exception& e) {
      return {500, ApiError(500, "internal_error", e.what()).body()};
    }
  }

  void mount(httplib::Server& server) {
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
      const HttpResponse r = handle(req.method, req.path, {req.params.begin(), req.params.end()}, req.body);
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Get(".*", forward);
    server.Post(".*", forward);
    server.Put(".*", forward);
    server.Delete(".*", forward);
    server.Patch(".*", forward);
  }

 private:
  struct Entry {
    std::mutex mutex;
    std::optional<Session> session;
    Clock::time_point last_used;
  };

  HttpResponse route(const std::string& method, const std::string& path,
                     const std::multimap<std::string, std::string>& query, const std::string& body) {
    static const std::regex session_path(R"(^/sessions/([^/]+)(/utterance|/commit)?$)");
    static const std::regex scene_path(R"(^/scenes/([^/]+)$)");
    std::smatch m;
    if (path == "/health") {
      expect(method, "GET");
      return health();
    }
    if (path == "/schema") {
      expect(method, "GET");
      return {200, nlohmann::json::parse(kApiSchema)};
    }
    if (path == "/sessions") {
      expect(method, "POST");
      return create_session(parse_body(body));
    }
    if (std::regex_match(path, m, session_path)) {
      const std::string id = m[1], action = m[2];
      if (action.empty()) {
        expect(method, "GET");
        return with_session(id, [&](Session& s) { return HttpResponse{200, session_state(s)}; });
      }
      expect(method, "POST");
      if (action == "/utterance") {
        const auto j = parse_body(body);
        detail::only_keys(j, {"text"});
        if (!j.contains("text") || !j["text"].is_string()) throw detail::bad_request("'text' must be a string");
        const std::string text = j["text"];
        return with_session(id, [&](Session& s) {
          s.submit_utterance(text);
          return HttpResponse{200, utterance_response(s)};
        });
      }
      if (!body.empty()) detail::only_keys(parse_body(body), {});
      return with_session(id, [&](Session& s) {
        const PickResult r = s.commit_pick();
        return HttpResponse{200,
                            {{"session_id", s.id()},
                             {"phase", phase_name(s.phase())},
                             {"removed_object_id", r.object_id},
                             {"box_id", r.box_id},
                             {"object_count", s.scene().objects.size()}}};
      });
    }
    if (path == "/scenes") {
      expect(method, "GET");
      return list_or_generate(query);
    }
    if (std::regex_match(path, m, scene_path)) {
      expect(method, "GET");
      return {200, detail::scene_document(stored_scene(m[1]))};
    }
    throw ApiError(404, "not_found", "no route for " + method + " " + path);
  }

  static void expect(const std::string& method, const std::string& wanted) {
    if (method != wanted) throw ApiError(405, "method_not_allowed", method + " is not supported here");
  }

  static nlohmann::json parse_body(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body.empty() ? std::string("{}") : body);
    } catch (const nlohmann::json::exception& e) {
      throw ApiError(400, "malformed_json", e.what());
    }
    if (!j.is_object()) throw detail::bad_request("request body must be a JSON object");
    return j;
  }

  HttpResponse health() const {
    const auto& c = model_->config();
    return {200,
            {{"status", "ok"},
             {"scene_count", scenes_.size()},
             {"live_sessions", live_sessions()},
             {"vocabulary_size", model_->vocabulary().size()},
             {"encoder", {{"embedding_dim", c.embedding_dim}, {"hidden_dim", c.hidden_dim},
                          {"lstm_layers", c.lstm_layers}, {"joint_dim", c.joint_dim}}}}};
  }

  const Scene& stored_scene(const std::string& id) const {
    auto it = scenes_.find(id);
    if (it == scenes_.end()) throw ApiError(404, "scene_not_found", "no scene '" + id + "'");
    return it->second;
  }

  Scene synthetic_scene(const nlohmann::json& spec) const {
    SyntheticConfig sc;
    std::uint64_t seed = cfg_.seed;
    std::size_t index = 0;
    try {
      if (spec.contains("seed")) seed = spec.at("seed").get<std::uint64_t>();
      if (spec.contains("index")) index = spec.at("index").get<std::size_t>();
      if (spec.contains("ambiguity_rate")) sc.ambiguity_rate = spec.at("ambiguity_rate").get<double>();
      sc.validate();
    } catch (const nlohmann::json::exception& e) {
      throw detail::bad_request(std::string("synthetic scene parameters: ") + e.what());
    } catch (const ConfigError& e) {
      throw detail::bad_request(std::string("synthetic scene parameters: ") + e.what());
    }
    return synthetic::generate_scene(sc, seed, index);
  }

  HttpResponse list_or_generate(const std::multimap<std::string, std::string>& query) const {
    std::map<std::string, std::string> q;
    for (const auto& [k, v] : query) q[k] = v;
    if (!q.count("source")) {
      if (!q.empty()) throw detail::bad_request("unknown query parameter '" + q.begin()->first + "'");
      nlohmann::json list = nlohmann::json::array();
      for (const auto& [id, s] : scenes_) list.push_back({{"scene_id", id}, {"object_count", s.objects.size()}});
      return {200, {{"scenes", list}}};
    }
    if (q["source"] != "synthetic") throw detail::bad_request("unknown scene source '" + q["source"] + "'");
    nlohmann::json spec = nlohmann::json::object();
    for (const auto& [k, v] : q) {
      if (k == "source") continue;
      if (k != "seed" && k != "index" && k != "ambiguity_rate") throw detail::bad_request("unknown query parameter '" + k + "'");
      try {
        std::size_t used = 0;
        if (k == "ambiguity_rate") {
          spec[k] = std::stod(v, &used);
        } else {
          if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
          spec[k] = static_cast<std::uint64_t>(std::stoull(v, &used));
        }
        if (used != v.size()) throw std::invalid_argument("trailing characters");
      } catch (const std::logic_error&) {
        throw detail::bad_request("query parameter '" + k + "' is not a valid number: '" + v + "'");
      }
    }
    return {200, detail::scene_document(synthetic_scene(spec))};
  }

  HttpResponse create_session(const nlohmann::json& req) {
    detail::only_keys(req, {"scene_id", "scene", "image_png_base64", "synthetic"});
    const int forms = static_cast<int>(req.contains("scene_id")) + static_cast<int>(req.contains("scene")) +
                      static_cast<int>(req.contains("synthetic"));
    if (forms != 1) throw detail::bad_request("give exactly one of 'scene_id', 'scene' or 'synthetic'");
    if (req.contains("image_png_base64") && !req.contains("scene")) {
      throw detail::bad_request("'image_png_base64' only accompanies an inline 'scene'");
    }
    Scene scene;
    bool inline_scene = false;
    if (req.contains("scene_id")) {
      if (!req["scene_id"].is_string()) throw detail::bad_request("'scene_id' must be a string");
      scene = stored_scene(req["scene_id"].get<std::string>());
    } else if (req.contains("synthetic")) {
      if (!req["synthetic"].is_object()) throw detail::bad_request("'synthetic' must be an object");
      detail::only_keys(req["synthetic"], {"seed", "index", "ambiguity_rate"});
      scene = synthetic_scene(req["synthetic"]);
    } else {
      inline_scene = true;
      scene = parse_inline(req);
    }

    std::string id;
    auto entry = std::make_shared<Entry>();
    {
      std::lock_guard lock(registry_mutex_);
      sweep_locked();
      do {
        id = "s-" + hex(ids_.next_u64()) + hex(ids_.next_u64());
      } while (sessions_.count(id) || expired_.count(id));
    }
    try {
      entry->session.emplace(id, std::move(scene), model_, cfg_.dialogue);
    } catch (const DialogueError& e) {
      if (inline_scene) throw ApiError(422, "invalid_scene", e.what());
      throw;
    } catch (const Error& e) {
      if (inline_scene) throw ApiError(422, "invalid_scene", e.what());
      throw;
    }
    entry->last_used = now_();
    nlohmann::json body{{"session_id", id},
                        {"phase", phase_name(entry->session->phase())},
                        {"feedback_budget", cfg_.dialogue.feedback_budget},
                        {"scene", detail::scene_summary(entry->session->scene(), cfg_.thumbnails)}};
    std::lock_guard lock(registry_mutex_);
    sessions_.emplace(id, std::move(entry));
    return {201, std::move(body)};
  }

  static Scene parse_inline(const nlohmann::json& req) {
    Scene scene;
    try {
      scene = scene_from_json(req["scene"]);
      if (req.contains("image_png_base64")) {
        if (!req["image_png_base64"].is_string()) throw ParseError("'image_png_base64' must be a string");
        scene.image = std::make_shared<const Image>(decode_png(base64_decode(req["image_png_base64"].get<std::string>())));
      }
      validate_scene(scene);
    } catch (const nlohmann::json::exception& e) {
      throw ApiError(422, "invalid_scene", e.what());
    } catch (const Error& e) {
      throw ApiError(422, "invalid_scene", e.what());
    }
    return scene;
  }

  static std::string hex(std::uint64_t v) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    return out;
  }

  // Caller holds registry_mutex_.
  void sweep_locked() {
    const auto t = now_();
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      std::unique_lock entry_lock(it->second->mutex, std::try_to_lock);
      if (entry_lock.owns_lock() && t - it->second->last_used > cfg_.idle_timeout) {
        expired_.insert(it->first);
        entry_lock.unlock();
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }

  template <typename Fn>
  HttpResponse with_session(const std::string& id, Fn&& fn) {
    std::shared_ptr<Entry> entry;
    {
      std::lock_guard lock(registry_mutex_);
      auto it = sessions_.find(id);
      if (it == sessions_.end()) {
        if (expired_.count(id)) throw ApiError(410, "session_expired", "session '" + id + "' expired");
        throw ApiError(404, "session_not_found", "no session '" + id + "'");
      }
      entry = it->second;
    }
    std::lock_guard entry_lock(entry->mutex);
    const auto t = now_();
    if (t - entry->last_used > cfg_.idle_timeout) {
      std::lock_guard lock(registry_mutex_);
      sessions_.erase(id);
      expired_.insert(id);
      throw ApiError(410, "session_expired", "session '" + id + "' expired");
    }
    entry->last_used = t;
    return fn(*entry->session);
  }

  nlohmann::json candidates(const Session& s) const {
    nlohmann::json objects = nlohmann::json::array(), boxes = nlohmann::json::array();
    if (s.object_verdict_now()) {
      const TurnScores& agg = *s.aggregate();
      for (std::size_t i : s.object_verdict_now()->candidates) {
        objects.push_back({{"object_id", agg.object_ids[i]},
                           {"score", agg.object_scores[i]},
                           {"bbox", bbox_to_json(s.proposals()[i].bbox)}});
      }
      for (std::size_t k : s.box_verdict_now()->candidates) boxes.push_back({{"box_id", k}, {"prob", agg.box_probs[k]}});
    }
    return {{"candidates", objects}, {"box_candidates", boxes}};
  }

  nlohmann::json utterance_response(const Session& s) const {
    nlohmann::json out{{"session_id", s.id()}, {"phase", phase_name(s.phase())}, {"feedback_used", s.feedback_used()}};
    out.update(candidates(s));
    if (s.prompt()) out["question"] = s.prompt()->question_text;
    if (s.resolution()) out["resolution"] = to_json(*s.resolution());
    return out;
  }

  nlohmann::json session_state(const Session& s) const {
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : s.scene().objects) objects.push_back({{"object_id", o.object_id}, {"bbox", bbox_to_json(o.bbox)}});
    nlohmann::json out{{"session_id", s.id()},
                       {"scene_id", s.scene().scene_id},
                       {"phase", phase_name(s.phase())},
                       {"feedback_used", s.feedback_used()},
                       {"feedback_budget", s.config().feedback_budget},
                       {"object_count", s.scene().objects.size()},
                       {"objects", objects}};
    out.update(candidates(s));
    out["question"] = s.prompt() ? nlohmann::json(s.prompt()->question_text) : nlohmann::json(nullptr);
    out["resolution"] = s.resolution() ? to_json(*s.resolution()) : nlohmann::json(nullptr);
    out["transcript"] = s.transcript();
    return out;
  }

  std::shared_ptr<const GroundingModel> model_;
  GatewayConfig cfg_;
  std::function<Clock::time_point()> now_;
  std::map<std::string, Scene> scenes_;

  mutable std::mutex registry_mutex_;
  Rng ids_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::set<std::string> expired_;
};

}  // namespace clarify
