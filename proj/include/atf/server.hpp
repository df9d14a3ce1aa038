#pragma once

#include <httplib.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/sqlite.hpp"

namespace atf {

enum class TaskState { pending, assigned, labeled, expired };

inline const char* to_string(TaskState s) {
  switch (s) {
    case TaskState::pending: return "pending";
    case TaskState::assigned: return "assigned";
    case TaskState::labeled: return "labeled";
    case TaskState::expired: return "expired";
  }
  return "pending";
}

inline TaskState task_state_from_string(std::string_view s) {
  if (s == "assigned") return TaskState::assigned;
  if (s == "labeled") return TaskState::labeled;
  if (s == "expired") return TaskState::expired;
  return TaskState::pending;
}

struct AnnotationTask {
  std::int64_t task_id = 0;
  std::string batch_id;
  Post post;
  Dimension dimension;
  TaskState state = TaskState::pending;
  std::optional<Label> label;
  std::optional<std::string> annotator_id;
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;
  std::optional<std::int64_t> lease_expires_ms;
};

struct BatchStatus {
  std::string batch_id;
  std::string dimension;
  std::size_t total = 0;
  std::size_t pending = 0;
  std::size_t assigned = 0;
  std::size_t labeled = 0;
  std::int64_t created_ms = 0;
  std::int64_t deadline_ms = 0;

  bool complete() const { return labeled == total; }
};

/// Service error carrying the HTTP status it maps to.
class AnnotationError : public Error {
 public:
  AnnotationError(int status, std::string code, const std::string& what)
      : Error("server", what), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

/// Milliseconds since the Unix epoch; injectable for lease tests.
using Clock = std::function<std::int64_t()>;

inline Clock system_clock_ms() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

/// Human-annotation queue persisted in a single SQLite file. Tasks move
/// pending -> assigned -> labeled; an assignment whose lease runs out goes
/// assigned -> expired -> pending. A labeled task never changes again.
class AnnotationService {
 public:
  explicit AnnotationService(const std::string& store_path = ":memory:",
                             std::chrono::milliseconds lease = std::chrono::minutes(5),
                             Clock clock = system_clock_ms())
      : db_(store_path), lease_(lease), clock_(std::move(clock)) {
    db_.exec(R"sql(
      PRAGMA journal_mode=WAL;
      CREATE TABLE IF NOT EXISTS batches (
        batch_id TEXT PRIMARY KEY, dimension TEXT NOT NULL,
        created_ms INTEGER NOT NULL, deadline_ms INTEGER NOT NULL);
      CREATE TABLE IF NOT EXISTS tasks (
        task_id INTEGER PRIMARY KEY AUTOINCREMENT,
        batch_id TEXT NOT NULL, post_id TEXT NOT NULL, dataset TEXT NOT NULL,
        post_text TEXT NOT NULL, dimension TEXT NOT NULL, definition TEXT NOT NULL,
        positive_token TEXT NOT NULL, negative_token TEXT NOT NULL,
        state TEXT NOT NULL, label INTEGER, annotator_id TEXT, last_annotator TEXT,
        created_ms INTEGER NOT NULL, updated_ms INTEGER NOT NULL, lease_expires_ms INTEGER);
      CREATE INDEX IF NOT EXISTS tasks_state ON tasks(state, created_ms, task_id);
      CREATE INDEX IF NOT EXISTS tasks_batch ON tasks(batch_id);
      CREATE TABLE IF NOT EXISTS experiments (id TEXT PRIMARY KEY, status TEXT NOT NULL);
    )sql");
  }

  std::chrono::milliseconds lease() const { return lease_; }
  std::int64_t now() const { return clock_(); }

  /// One pending task per post under a new batch.
  std::string enqueue(const std::vector<Post>& posts, const Dimension& dimension,
                      std::chrono::milliseconds deadline) {
    if (posts.empty()) throw PreconditionError("server", "enqueue needs at least one post");
    std::lock_guard lock(mu_);
    sqlite::Transaction tx(db_);
    const auto t = clock_();
    {
      std::set<std::pair<std::string, std::string>> seen;
      for (const auto& p : posts) {
        if (!seen.emplace(p.dataset, p.id).second)
          throw AnnotationError(409, "conflict", "post '" + p.id + "' listed twice");
        auto s = db_.prepare(
            "SELECT 1 FROM tasks WHERE post_id = ?1 AND dataset = ?2 AND dimension = ?3 "
            "AND state != 'labeled' LIMIT 1");
        s.bind(1, p.id).bind(2, p.dataset).bind(3, dimension.name);
        if (s.step())
          throw AnnotationError(409, "conflict", "post '" + p.id + "' is already in flight");
      }
    }
    std::int64_t n = 0;
    {
      auto s = db_.prepare("SELECT COUNT(*) FROM batches");
      s.step();
      n = s.int64(0);
    }
    const std::string batch_id = "batch-" + std::to_string(n + 1);
    db_.prepare("INSERT INTO batches VALUES (?1, ?2, ?3, ?4)")
        .bind(1, batch_id)
        .bind(2, dimension.name)
        .bind(3, t)
        .bind(4, t + deadline.count())
        .run();
    for (const auto& p : posts) {
      db_.prepare(
             "INSERT INTO tasks (batch_id, post_id, dataset, post_text, dimension, definition, "
             "positive_token, negative_token, state, created_ms, updated_ms) "
             "VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, 'pending', ?9, ?9)")
          .bind(1, batch_id)
          .bind(2, p.id)
          .bind(3, p.dataset)
          .bind(4, p.text)
          .bind(5, dimension.name)
          .bind(6, dimension.definition)
          .bind(7, dimension.positive_token)
          .bind(8, dimension.negative_token)
          .bind(9, t)
          .run();
    }
    tx.commit();
    return batch_id;
  }

  /// Atomically lease the oldest pending task to `annotator_id`.
  std::optional<AnnotationTask> next_task(const std::string& annotator_id) {
    if (annotator_id.empty()) throw PreconditionError("server", "annotator id required");
    std::lock_guard lock(mu_);
    sqlite::Transaction tx(db_);
    const auto t = clock_();
    reap_expired(t);
    std::optional<std::int64_t> id;
    {
      auto s = db_.prepare(
          "SELECT task_id FROM tasks WHERE state = 'pending' ORDER BY created_ms, task_id LIMIT 1");
      if (s.step()) id = s.int64(0);
    }
    if (!id) {
      tx.commit();
      return std::nullopt;
    }
    db_.prepare(
           "UPDATE tasks SET state = 'assigned', annotator_id = ?1, last_annotator = ?1, "
           "updated_ms = ?2, lease_expires_ms = ?3 WHERE task_id = ?4")
        .bind(1, annotator_id)
        .bind(2, t)
        .bind(3, t + lease_.count())
        .bind(4, *id)
        .run();
    auto task = load_task(*id);
    tx.commit();
    return task;
  }

  /// Record `label` for a task currently leased to `annotator_id`.
  AnnotationTask submit_label(std::int64_t task_id, const std::string& annotator_id, Label label) {
    std::lock_guard lock(mu_);
    sqlite::Transaction tx(db_);
    const auto t = clock_();
    auto task = load_task(task_id);
    if (!task) throw AnnotationError(404, "not_found", "no task " + std::to_string(task_id));
    if (task->state == TaskState::labeled)
      throw AnnotationError(409, "already_labeled", "task " + std::to_string(task_id) + " is already labeled");
    const bool mine = task->annotator_id == annotator_id;
    if (task->state == TaskState::assigned && mine && task->lease_expires_ms && *task->lease_expires_ms <= t) {
      reap_expired(t);
      tx.commit();
      throw AnnotationError(410, "lease_expired", "lease on task " + std::to_string(task_id) + " expired");
    }
    if (task->state != TaskState::assigned || !mine) {
      std::string last;
      {
        auto s = db_.prepare("SELECT last_annotator FROM tasks WHERE task_id = ?1");
        s.bind(1, task_id);
        if (s.step()) last = s.text(0);
      }
      if (task->state != TaskState::assigned && last == annotator_id)
        throw AnnotationError(410, "lease_expired", "lease on task " + std::to_string(task_id) + " expired");
      throw AnnotationError(403, "wrong_annotator",
                            "task " + std::to_string(task_id) + " is not assigned to " + annotator_id);
    }
    db_.prepare(
           "UPDATE tasks SET state = 'labeled', label = ?1, updated_ms = ?2, lease_expires_ms = NULL "
           "WHERE task_id = ?3 AND state = 'assigned'")
        .bind(1, static_cast<std::int64_t>(label == Label::positive))
        .bind(2, t)
        .bind(3, task_id)
        .run();
    auto done = load_task(task_id);
    tx.commit();
    return *done;
  }

  BatchStatus batch(const std::string& batch_id) {
    std::lock_guard lock(mu_);
    BatchStatus b;
    {
      auto s = db_.prepare("SELECT dimension, created_ms, deadline_ms FROM batches WHERE batch_id = ?1");
      s.bind(1, batch_id);
      if (!s.step()) throw AnnotationError(404, "not_found", "no batch " + batch_id);
      b.batch_id = batch_id;
      b.dimension = s.text(0);
      b.created_ms = s.int64(1);
      b.deadline_ms = s.int64(2);
    }
    auto s = db_.prepare("SELECT state, COUNT(*) FROM tasks WHERE batch_id = ?1 GROUP BY state");
    s.bind(1, batch_id);
    while (s.step()) {
      const auto n = static_cast<std::size_t>(s.int64(1));
      b.total += n;
      switch (task_state_from_string(s.text(0))) {
        case TaskState::labeled: b.labeled += n; break;
        case TaskState::assigned: b.assigned += n; break;
        default: b.pending += n; break;
      }
    }
    return b;
  }

  std::vector<AnnotationTask> batch_tasks(const std::string& batch_id) {
    std::lock_guard lock(mu_);
    std::vector<std::int64_t> ids;
    {
      auto s = db_.prepare("SELECT task_id FROM tasks WHERE batch_id = ?1 ORDER BY task_id");
      s.bind(1, batch_id);
      while (s.step()) ids.push_back(s.int64(0));
    }
    std::vector<AnnotationTask> out;
    for (auto id : ids) out.push_back(*load_task(id));
    return out;
  }

  std::optional<AnnotationTask> task(std::int64_t task_id) {
    std::lock_guard lock(mu_);
    return load_task(task_id);
  }

  void set_experiment_status(const std::string& id, const nlohmann::json& status) {
    std::lock_guard lock(mu_);
    db_.prepare("INSERT OR REPLACE INTO experiments VALUES (?1, ?2)").bind(1, id).bind(2, status.dump()).run();
  }

  std::optional<nlohmann::json> experiment_status(const std::string& id) {
    std::lock_guard lock(mu_);
    auto s = db_.prepare("SELECT status FROM experiments WHERE id = ?1");
    s.bind(1, id);
    if (!s.step()) return std::nullopt;
    return nlohmann::json::parse(s.text(0));
  }

 private:
  void reap_expired(std::int64_t t) {
    db_.prepare(
           "UPDATE tasks SET state = 'expired', updated_ms = ?1 "
           "WHERE state = 'assigned' AND lease_expires_ms <= ?1")
        .bind(1, t)
        .run();
    db_.prepare(
           "UPDATE tasks SET state = 'pending', annotator_id = NULL, lease_expires_ms = NULL "
           "WHERE state = 'expired'")
        .run();
  }

  std::optional<AnnotationTask> load_task(std::int64_t id) {
    auto s = db_.prepare(
        "SELECT task_id, batch_id, post_id, dataset, post_text, dimension, definition, positive_token, "
        "negative_token, state, label, annotator_id, created_ms, updated_ms, lease_expires_ms "
        "FROM tasks WHERE task_id = ?1");
    s.bind(1, id);
    if (!s.step()) return std::nullopt;
    AnnotationTask t;
    t.task_id = s.int64(0);
    t.batch_id = s.text(1);
    t.post = {s.text(2), s.text(4), s.text(3)};
    t.dimension = {s.text(5), s.text(6), s.text(7), s.text(8)};
    t.state = task_state_from_string(s.text(9));
    if (auto l = s.opt_int64(10)) t.label = *l ? Label::positive : Label::negative;
    t.annotator_id = s.opt_text(11);
    t.created_ms = s.int64(12);
    t.updated_ms = s.int64(13);
    t.lease_expires_ms = s.opt_int64(14);
    return t;
  }

  sqlite::Database db_;
  std::chrono::milliseconds lease_;
  Clock clock_;
  std::mutex mu_;
};

inline nlohmann::json to_json(const AnnotationTask& t) {
  nlohmann::json j{{"task_id", t.task_id},
                   {"batch_id", t.batch_id},
                   {"post_id", t.post.id},
                   {"text", t.post.text},
                   {"dimension", t.dimension.name},
                   {"definition", t.dimension.definition},
                   {"tokens", {t.dimension.positive_token, t.dimension.negative_token}},
                   {"state", to_string(t.state)},
                   {"created_ms", t.created_ms},
                   {"updated_ms", t.updated_ms}};
  j["label"] = t.label ? nlohmann::json(t.dimension.token(*t.label)) : nlohmann::json(nullptr);
  j["annotator_id"] = t.annotator_id ? nlohmann::json(*t.annotator_id) : nlohmann::json(nullptr);
  j["lease_expires_ms"] = t.lease_expires_ms ? nlohmann::json(*t.lease_expires_ms) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const BatchStatus& b) {
  return {{"batch_id", b.batch_id}, {"dimension", b.dimension}, {"total", b.total},
          {"pending", b.pending},   {"assigned", b.assigned},   {"labeled", b.labeled},
          {"complete", b.complete()}, {"created_ms", b.created_ms}, {"deadline_ms", b.deadline_ms}};
}

struct ServerOptions {
  std::string token;          // shared secret; empty disables auth
  std::filesystem::path ui_dir;  // static annotator bundle, optional
};

/// JSON/HTTP front end for an AnnotationService.
///
///   GET  /api/tasks/next?annotator_id=ID      200 task | 204
///   POST /api/tasks/{id}/label                 {"annotator_id", "label": "Yes"|"No"|1|0}
///   GET  /api/batches/{id}
///   POST /api/batches                          {"posts": [{id,text,dataset?}], "dimension": {...}, "deadline_s"}
///   GET  /api/experiments/{id}/status
class AnnotationServer {
 public:
  AnnotationServer(AnnotationService& service, ServerOptions options = {})
      : service_(service), options_(std::move(options)) {
    routes();
  }

  /// Bind to an ephemeral port and return it.
  int bind_any(const std::string& host = "127.0.0.1") { return http_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return http_.bind_to_port(host, port); }
  bool listen_after_bind() { return http_.listen_after_bind(); }
  void stop() { http_.stop(); }
  void wait_until_ready() { http_.wait_until_ready(); }

 private:
  static void reply_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", code}, {"message", msg}}.dump(), "application/json");
  }

  bool authorized(const httplib::Request& req) const {
    if (options_.token.empty()) return true;
    return req.get_header_value("Authorization") == "Bearer " + options_.token ||
           req.get_header_value("X-ATF-Token") == options_.token;
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req)) return reply_error(res, 401, "unauthorized", "missing or bad token");
      try {
        f(req, res);
      } catch (const AnnotationError& e) {
        reply_error(res, e.status(), e.code(), e.what());
      } catch (const PreconditionError& e) {
        reply_error(res, 400, "bad_request", e.what());
      } catch (const nlohmann::json::exception& e) {
        reply_error(res, 400, "bad_request", e.what());
      } catch (const std::exception& e) {
        reply_error(res, 500, "internal", e.what());
      }
    };
  }

  static Label parse_label(const nlohmann::json& v, const Dimension& dim) {
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == dim.positive_token || s == "Yes" || s == "1") return Label::positive;
      if (s == dim.negative_token || s == "No" || s == "0") return Label::negative;
    } else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
      return v.get<int>() ? Label::positive : Label::negative;
    } else if (v.is_boolean()) {
      return v.get<bool>() ? Label::positive : Label::negative;
    }
    throw PreconditionError("server", "label must be Yes or No");
  }

  void routes() {
    http_.Get("/api/tasks/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto annotator = req.get_param_value("annotator_id");
      if (annotator.empty()) annotator = req.get_header_value("X-Annotator-Id");
      auto task = service_.next_task(annotator);
      if (!task) {
        res.status = 204;
        return;
      }
      res.set_content(to_json(*task).dump(), "application/json");
    }));
    http_.Post(R"(/api/tasks/(\d+)/label)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = std::stoll(req.matches[1].str());
      const auto body = nlohmann::json::parse(req.body);
      auto current = service_.task(id);
      if (!current) throw AnnotationError(404, "not_found", "no task " + std::to_string(id));
      auto annotator = body.value("annotator_id", req.get_header_value("X-Annotator-Id"));
      auto task = service_.submit_label(id, annotator, parse_label(body.at("label"), current->dimension));
      res.set_content(to_json(task).dump(), "application/json");
    }));
    http_.Get(R"(/api/batches/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      res.set_content(to_json(service_.batch(req.matches[1].str())).dump(), "application/json");
    }));
    http_.Post("/api/batches", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      const auto& d = body.at("dimension");
      Dimension dim{d.at("name").get<std::string>(), d.at("definition").get<std::string>(),
                    d.value("positive_token", std::string("Yes")), d.value("negative_token", std::string("No"))};
      std::vector<Post> posts;
      for (const auto& p : body.at("posts"))
        posts.push_back({p.at("id").get<std::string>(), p.at("text").get<std::string>(),
                         p.value("dataset", std::string())});
      const auto deadline = std::chrono::milliseconds(
          static_cast<long long>(body.value("deadline_s", 3600.0) * 1000.0));
      const auto id = service_.enqueue(posts, dim, deadline);
      res.status = 201;
      res.set_content(to_json(service_.batch(id)).dump(), "application/json");
    }));
    http_.Get(R"(/api/experiments/([^/]+)/status)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto status = service_.experiment_status(req.matches[1].str());
      if (!status) throw AnnotationError(404, "not_found", "no experiment " + req.matches[1].str());
      res.set_content(status->dump(), "application/json");
    }));
    if (!options_.ui_dir.empty() && std::filesystem::is_directory(options_.ui_dir))
      http_.set_mount_point("/", options_.ui_dir.string());
  }

  AnnotationService& service_;
  ServerOptions options_;
  httplib::Server http_;
};

}  // namespace atf
