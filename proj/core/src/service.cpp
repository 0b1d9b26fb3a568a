#include "respilot/service.hpp"

#include "respilot/errors.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>

namespace respilot {

namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using json = nlohmann::json;
using steady = std::chrono::steady_clock;

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json error_frame(std::string_view code, std::string_view message, std::optional<std::int64_t> tick = std::nullopt,
                 bool fatal = false) {
    json e{{"kind", "error"}, {"code", code}, {"message", message}, {"fatal", fatal}};
    e["tick"] = tick ? json(*tick) : json(nullptr);
    return e;
}

json model_json(const HandModel& model) {
    json fingers = json::array();
    for (int f = 0; f < model.finger_count(); ++f) {
        const FingerChain& chain = model.fingers()[static_cast<std::size_t>(f)];
        json joints = json::array();
        for (const auto& j : chain.joints) joints.push_back({{"name", j.name}, {"lo", j.limits.lo}, {"hi", j.limits.hi}});
        const FingerSlice s = model.slice(f);
        fingers.push_back({{"name", chain.name}, {"offset", s.offset}, {"joints", joints}});
    }
    return {{"name", model.name()},
            {"hash", model_hash(model)},
            {"dof", model.dof()},
            {"keypoints", model.keypoint_ids()},
            {"fingers", fingers}};
}

json config_json(const SessionConfig& c) {
    return {{"retargeter", to_string(c.kind)},
            {"smoothing", c.smoothing},
            {"distance", c.distance},
            {"beta", c.hkvm.beta},
            {"gamma", c.hkvm.gamma},
            {"time_budget", c.hkvm.time_budget},
            {"max_iters", c.hkvm.max_iters},
            {"constraint_tolerance", c.constraint.tolerance}};
}

json finger_names(const HandModel& model, const std::vector<int>& fingers) {
    json out = json::array();
    for (int f : fingers) out.push_back(model.fingers()[static_cast<std::size_t>(f)].name);
    return out;
}

json keypoints_json(const HandModel& model, const JointConfig& q) {
    const auto kp = forward_kinematics(model, q);
    json out = json::object();
    for (std::size_t i = 0; i < kp.size(); ++i) out[model.keypoint_ids()[i]] = {kp[i].x(), kp[i].y(), kp[i].z()};
    return out;
}

class RollingStat {
public:
    explicit RollingStat(std::size_t window = 256) : window_(window) {}
    void add(double v) {
        values_.push_back(v);
        if (values_.size() > window_) values_.pop_front();
        ++count_;
    }
    json to_json() const {
        double sum = 0.0, mx = 0.0;
        for (double v : values_) {
            sum += v;
            mx = std::max(mx, v);
        }
        const double mean = values_.empty() ? 0.0 : sum / static_cast<double>(values_.size());
        return {{"count", count_}, {"mean", mean}, {"max", mx}, {"last", values_.empty() ? 0.0 : values_.back()}};
    }

private:
    std::size_t window_;
    std::deque<double> values_;
    std::uint64_t count_ = 0;
};

constexpr std::array<const char*, 7> kStageNames{"queue", "base", "residual", "reconstruct", "constraint", "smoothing",
                                                 "total"};

struct Inbound {
    std::string kind;
    json doc;
    std::optional<std::int64_t> tick;
    steady::time_point arrived;
};

struct Outbound {
    std::string text;
    bool is_result = false;
    bool close_after = false;
};

/// State shared by a connection (I/O thread) and its pipeline worker.
struct SessionCore {
    std::uint64_t id = 0;
    std::shared_ptr<const RetargetContext> context;
    SessionConfig defaults;
    std::function<json()> health;
    std::function<void(Outbound)> send;

    std::mutex mutex;
    std::condition_variable cv;
    std::deque<Inbound> inbox;
    bool stopping = false;

    // Stats, guarded by stats_mutex.
    mutable std::mutex stats_mutex;
    std::string retargeter;
    std::vector<int> constraints;
    std::uint64_t ticks = 0;
    std::uint64_t superseded = 0;
    std::uint64_t dropped_results = 0;
    std::uint64_t errors = 0;
    std::array<RollingStat, kStageNames.size()> latency;

    explicit SessionCore(std::size_t window) {
        for (auto& s : latency) s = RollingStat(window);
    }

    json stats_json() const {
        std::lock_guard lock(stats_mutex);
        json lat = json::object();
        for (std::size_t i = 0; i < kStageNames.size(); ++i) lat[kStageNames[i]] = latency[i].to_json();
        return {{"session_id", id},
                {"retargeter", retargeter.empty() ? json(nullptr) : json(retargeter)},
                {"ticks", ticks},
                {"superseded_states", superseded},
                {"dropped_results", dropped_results},
                {"errors", errors},
                {"active_constraints", finger_names(context->robot(), constraints)},
                {"latency_s", lat}};
    }

    void reply(const json& doc, bool is_result = false, bool close_after = false) {
        if (doc.value("kind", "") == "error") {
            std::lock_guard lock(stats_mutex);
            ++errors;
        }
        send(Outbound{doc.dump(), is_result, close_after});
    }
};

// --- pipeline worker -----------------------------------------------------------------------

class Worker {
public:
    explicit Worker(std::shared_ptr<SessionCore> core) : core_(std::move(core)) {}

    void run() {
        for (;;) {
            Inbound msg;
            {
                std::unique_lock lock(core_->mutex);
                core_->cv.wait(lock, [&] { return core_->stopping || !core_->inbox.empty(); });
                if (core_->stopping) return;
                msg = std::move(core_->inbox.front());
                core_->inbox.pop_front();
            }
            try {
                handle(msg);
            } catch (const InvalidInput& e) {
                core_->reply(error_frame("invalid_input", e.what(), msg.tick));
            } catch (const json::exception& e) {
                core_->reply(error_frame("bad_message", std::string("missing or mistyped field: ") + e.what(), msg.tick));
            } catch (const std::exception& e) {
                core_->reply(error_frame("internal", e.what(), msg.tick));
            }
        }
    }

private:
    void handle(const Inbound& msg) {
        if (msg.kind == "hello") return on_hello(msg);
        if (!session_) throw InvalidInput("session not initialised");
        if (msg.kind == "state") return on_state(msg);
        if (msg.kind == "toggle_constraint") return on_toggle(msg);
        if (msg.kind == "set_retargeter") return on_set_retargeter(msg);
        if (msg.kind == "set_params") return on_set_params(msg);
        if (msg.kind == "health") return core_->reply(core_->health());
        throw InvalidInput("unsupported message kind '" + msg.kind + "'");
    }

    void publish_config() {
        std::lock_guard lock(core_->stats_mutex);
        core_->retargeter = std::string(to_string(session_->config().kind));
        core_->constraints = session_->constraints();
    }

    void on_hello(const Inbound& msg) {
        SessionConfig cfg = core_->defaults;
        if (msg.doc.contains("retargeter")) cfg.kind = parse_retargeter_kind(msg.doc.at("retargeter").get<std::string>());
        try {
            session_ = std::make_unique<RetargetSession>(core_->context, cfg);
        } catch (const InvalidInput& e) {
            core_->reply(error_frame("handshake", e.what(), std::nullopt, true), false, true);
            return;
        }
        publish_config();
        const RetargetContext& ctx = *core_->context;
        const CalibrationBundle* bundle = ctx.bundle();
        json kinds = json::array();
        for (RetargeterKind k : all_retargeter_kinds())
            if (!needs_bundle(k) || (bundle && (k != RetargeterKind::gp_direct || bundle->has_direct())))
                kinds.push_back(to_string(k));
        core_->reply({{"kind", "hello"},
                      {"protocol_version", kProtocolVersion},
                      {"session_id", core_->id},
                      {"human_model", model_json(ctx.human())},
                      {"robot_model", model_json(ctx.robot())},
                      {"bundle_id", bundle ? json(bundle->id()) : json(nullptr)},
                      {"retargeters", kinds},
                      {"config", config_json(session_->config())}});
    }

    void on_state(const Inbound& msg) {
        const HandModel& human = core_->context->human();
        const json& arr = msg.doc.at("q_h");
        if (!arr.is_array()) throw InvalidInput("state.q_h must be an array of angles");
        if (static_cast<int>(arr.size()) != human.dof())
            throw InvalidInput("state.q_h has " + std::to_string(arr.size()) + " angles; the human model has " +
                               std::to_string(human.dof()));
        JointConfig q_h(human.dof());
        for (int i = 0; i < human.dof(); ++i) {
            const json& v = arr[static_cast<std::size_t>(i)];
            if (!v.is_number()) throw InvalidInput("state.q_h[" + std::to_string(i) + "] is not a number");
            q_h[i] = v.get<double>();
        }
        const double queued = std::chrono::duration<double>(steady::now() - msg.arrived).count();
        const RetargetResult r = session_->step(q_h);
        const HandModel& robot = core_->context->robot();

        json violations = json::array();
        for (const auto& c : r.constraints)
            violations.push_back({{"finger", robot.fingers()[static_cast<std::size_t>(c.finger)].name},
                                  {"distance", c.distance},
                                  {"violation", c.violation},
                                  {"satisfied", c.satisfied}});
        json flags{{"solver_status", r.base_status ? json(to_string(*r.base_status)) : json(nullptr)},
                   {"degenerate_fingers", finger_names(robot, r.degenerate_fingers)},
                   {"unreachable_fingers", finger_names(robot, r.unreachable_fingers)},
                   {"zero_width_joints", r.zero_width_joints},
                   {"constraints_feasible", r.constraints_feasible},
                   {"constraint_violations", violations}};
        json timings{{"queue", queued},
                     {"base", r.timings.base},
                     {"residual", r.timings.residual},
                     {"reconstruct", r.timings.reconstruct},
                     {"constraint", r.timings.constraint},
                     {"smoothing", r.timings.smoothing},
                     {"total", r.timings.total}};
        {
            std::lock_guard lock(core_->stats_mutex);
            ++core_->ticks;
            const std::array<double, kStageNames.size()> v{queued, r.timings.base, r.timings.residual,
                                                            r.timings.reconstruct, r.timings.constraint,
                                                            r.timings.smoothing, r.timings.total};
            for (std::size_t i = 0; i < v.size(); ++i) core_->latency[i].add(v[i]);
        }
        core_->reply({{"kind", "result"},
                      {"tick", *msg.tick},
                      {"retargeter", to_string(session_->config().kind)},
                      {"q_base", vec_json(r.q_base)},
                      {"q_d", vec_json(r.q_d)},
                      {"q_c", vec_json(r.q_c)},
                      {"q_target", vec_json(r.q_target)},
                      {"keypoints", keypoints_json(robot, r.q_c)},
                      {"keypoints_target", keypoints_json(robot, r.q_target)},
                      {"active_constraints", finger_names(robot, session_->constraints())},
                      {"timings_s", timings},
                      {"flags", flags}},
                     true);
    }

    void on_toggle(const Inbound& msg) {
        const HandModel& robot = core_->context->robot();
        const json& fj = msg.doc.at("finger");
        const int finger = fj.is_string() ? robot.finger_index(fj.get<std::string>()) : fj.get<int>();
        const bool on = msg.doc.at("on").get<bool>();
        session_->set_constraint(finger, on);
        publish_config();
        core_->reply({{"kind", "toggle_constraint"},
                      {"finger", robot.fingers()[static_cast<std::size_t>(finger)].name},
                      {"on", on},
                      {"active_constraints", finger_names(robot, session_->constraints())}});
    }

    void on_set_retargeter(const Inbound& msg) {
        session_->set_kind(parse_retargeter_kind(msg.doc.at("retargeter").get<std::string>()));
        publish_config();
        core_->reply({{"kind", "set_retargeter"}, {"retargeter", to_string(session_->config().kind)}});
    }

    void on_set_params(const Inbound& msg) {
        const json& p = msg.doc.at("params");
        if (!p.is_object()) throw InvalidInput("set_params.params must be an object");
        SessionConfig c = session_->config();
        for (const auto& [key, value] : p.items()) {
            if (key == "reset") continue;
            if (key == "beta") c.hkvm.beta = value.get<double>();
            else if (key == "gamma") c.hkvm.gamma = value.get<double>();
            else if (key == "time_budget") c.hkvm.time_budget = value.get<double>();
            else if (key == "max_iters") c.hkvm.max_iters = value.get<int>();
            else if (key == "smoothing") c.smoothing = value.get<double>();
            else if (key == "distance") c.distance = value.get<double>();
            else if (key == "constraint_tolerance") c.constraint.tolerance = value.get<double>();
            else throw InvalidInput("unknown parameter '" + key + "'");
        }
        session_->set_config(c);
        if (p.contains("reset") && p.at("reset").get<bool>()) session_->reset();
        publish_config();
        core_->reply({{"kind", "set_params"}, {"config", config_json(session_->config())}});
    }

    std::shared_ptr<SessionCore> core_;
    std::unique_ptr<RetargetSession> session_;
};

}  // namespace

// --- server ----------------------------------------------------------------------------------

struct Server::Impl {
    std::shared_ptr<const RetargetContext> context;
    ServerConfig config;
    steady::time_point started = steady::now();
    std::atomic<std::uint64_t> next_id{1};

    mutable std::mutex registry_mutex;
    std::vector<std::weak_ptr<SessionCore>> sessions;

    class Connection;
    std::mutex conn_mutex;
    std::vector<std::weak_ptr<Connection>> connections;

    std::thread io_thread;
    std::atomic<bool> io_done{false};
    std::mutex stop_mutex;
    std::condition_variable stop_cv;
    bool stopped = false;
    bool running = false;

    // Declared last so it is destroyed first: pending handlers still own connections.
    asio::io_context ioc;
    std::optional<tcp::acceptor> acceptor;

    json health() const;
    void do_accept();
    void register_session(const std::shared_ptr<SessionCore>& core) {
        std::lock_guard lock(registry_mutex);
        std::erase_if(sessions, [](const auto& w) { return w.expired(); });
        sessions.push_back(core);
    }
};

class Server::Impl::Connection : public std::enable_shared_from_this<Connection> {
public:
    Connection(tcp::socket socket, Impl& server) : stream_(std::move(socket)), server_(server) {}

    ~Connection() {
        if (core_) {
            {
                std::lock_guard lock(core_->mutex);
                core_->stopping = true;
            }
            core_->cv.notify_all();
        }
        if (worker_.joinable()) worker_.join();
    }

    void start() {
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buffer_, request_,
                         [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_request(ec); });
    }

    void shutdown() {
        beast::error_code ec;
        if (ws_)
            beast::get_lowest_layer(*ws_).socket().close(ec);
        else
            stream_.socket().close(ec);
    }

private:
    void on_request(beast::error_code ec) {
        if (ec) return;
        if (websocket::is_upgrade(request_)) {
            ws_.emplace(std::move(stream_));
            beast::get_lowest_layer(*ws_).expires_never();
            ws_->set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
            ws_->async_accept(request_, [self = shared_from_this()](beast::error_code e) { self->on_accept(e); });
            return;
        }
        serve_http();
    }

    void serve_http() {
        auto res = std::make_shared<http::response<http::string_body>>();
        res->version(request_.version());
        res->keep_alive(false);
        res->set(http::field::content_type, "application/json");
        res->set(http::field::access_control_allow_origin, "*");
        const bool health = request_.method() == http::verb::get &&
                            (request_.target() == "/health" || request_.target().starts_with("/health?"));
        if (health) {
            res->result(http::status::ok);
            res->body() = server_.health().dump();
        } else {
            res->result(http::status::not_found);
            res->body() = error_frame("not_found", "only GET /health and WebSocket upgrades are served").dump();
        }
        res->prepare_payload();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
            beast::error_code ignored;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        });
    }

    void on_accept(beast::error_code ec) {
        if (ec) return;
        core_ = std::make_shared<SessionCore>(server_.config.latency_window);
        core_->id = server_.next_id++;
        core_->context = server_.context;
        core_->defaults = server_.config.session;
        core_->health = [&server = server_] { return server.health(); };
        std::weak_ptr<Connection> weak = weak_from_this();
        auto executor = ws_->get_executor();
        core_->send = [weak, executor](Outbound out) {
            asio::post(executor, [weak, out = std::move(out)]() mutable {
                if (auto self = weak.lock()) self->deliver(std::move(out));
            });
        };
        server_.register_session(core_);
        worker_ = std::thread([core = core_] { Worker(core).run(); });
        spdlog::info("session {} connected", core_->id);
        do_read();
    }

    void do_read() {
        ws_->async_read(read_buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            self->on_read(ec);
        });
    }

    void on_read(beast::error_code ec) {
        if (ec) {
            if (ec != websocket::error::closed && ec != asio::error::operation_aborted)
                spdlog::debug("session {} read ended: {}", core_->id, ec.message());
            spdlog::info("session {} disconnected", core_->id);
            return;
        }
        const std::string text = beast::buffers_to_string(read_buffer_.data());
        read_buffer_.consume(read_buffer_.size());
        if (!closing_) on_message(text);
        if (!closing_) do_read();
    }

    void fail(std::string_view code, std::string_view message, std::optional<std::int64_t> tick = std::nullopt) {
        // Delivered directly: no read is pending once closing, so a posted frame could outlive us.
        closing_ = true;
        {
            std::lock_guard lock(core_->stats_mutex);
            ++core_->errors;
        }
        deliver(Outbound{error_frame(code, message, tick, true).dump(), false, true});
    }

    // Runs on the I/O thread: framing, handshake checks and the freshest-input policy. All
    // pipeline work happens on the session's worker in arrival order.
    void on_message(const std::string& text) {
        json doc;
        try {
            doc = json::parse(text);
        } catch (const json::parse_error& e) {
            core_->reply(error_frame("bad_message", std::string("malformed JSON: ") + e.what()));
            return;
        }
        if (!doc.is_object() || !doc.contains("kind") || !doc.at("kind").is_string()) {
            core_->reply(error_frame("bad_message", "message must be an object with a string 'kind'"));
            return;
        }
        Inbound in{doc.at("kind").get<std::string>(), std::move(doc), std::nullopt, steady::now()};

        if (!greeted_) {
            if (in.kind != "hello") return fail("protocol", "the first message must be 'hello'");
            if (!hello_ok(in.doc)) return;
            greeted_ = true;
            return enqueue(std::move(in));
        }
        if (in.kind == "hello") return fail("protocol", "duplicate hello");
        if (in.kind == "state") {
            const json& t = in.doc.contains("tick") ? in.doc.at("tick") : json();
            if (!t.is_number_integer()) {
                core_->reply(error_frame("bad_message", "state.tick must be an integer"));
                return;
            }
            in.tick = t.get<std::int64_t>();
            if (last_tick_ && *in.tick <= *last_tick_) {
                core_->reply(error_frame("stale_tick",
                                         "tick ids must increase; last accepted was " + std::to_string(*last_tick_),
                                         in.tick));
                return;
            }
            last_tick_ = in.tick;
            if (!in.doc.contains("q_h")) {
                core_->reply(error_frame("bad_message", "state needs 'q_h'", in.tick));
                return;
            }
        } else if (in.kind == "result" || in.kind == "error") {
            core_->reply(error_frame("bad_message", "'" + in.kind + "' frames are sent by the server only"));
            return;
        }
        enqueue(std::move(in));
    }

    bool hello_ok(const json& doc) {
        const RetargetContext& ctx = *server_.context;
        const json& pv = doc.contains("protocol_version") ? doc.at("protocol_version") : json();
        if (!pv.is_number_integer() || pv.get<int>() != kProtocolVersion) {
            fail("protocol_version", "server speaks protocol_version " + std::to_string(kProtocolVersion));
            return false;
        }
        auto check_dof = [&](const char* key, const HandModel& model) {
            if (!doc.contains(key)) return true;
            const json& v = doc.at(key);
            if (!v.is_number_integer() || v.get<int>() != model.dof()) {
                fail("dof_mismatch", std::string(key) + " " + v.dump() + " does not match the server model (" +
                                         std::to_string(model.dof()) + ")");
                return false;
            }
            return true;
        };
        if (!check_dof("human_dof", ctx.human()) || !check_dof("robot_dof", ctx.robot())) return false;
        auto check_name = [&](const char* key, const HandModel& model) {
            if (!doc.contains(key) || doc.at(key).is_null()) return true;
            if (doc.at(key) != model.name()) {
                fail("model_mismatch", std::string(key) + " '" + doc.at(key).dump() + "' is not served here");
                return false;
            }
            return true;
        };
        if (!check_name("human_model", ctx.human()) || !check_name("robot_model", ctx.robot())) return false;
        if (doc.contains("bundle_id") && !doc.at("bundle_id").is_null()) {
            const CalibrationBundle* b = ctx.bundle();
            if (!b || doc.at("bundle_id") != b->id()) {
                fail("bundle_mismatch", "requested bundle is not loaded");
                return false;
            }
        }
        return true;
    }

    void enqueue(Inbound in) {
        std::optional<std::int64_t> superseded;
        {
            std::lock_guard lock(core_->mutex);
            if (in.kind == "state") {
                for (auto it = core_->inbox.begin(); it != core_->inbox.end(); ++it) {
                    if (it->kind == "state") {
                        superseded = it->tick;
                        core_->inbox.erase(it);
                        break;
                    }
                }
            }
            core_->inbox.push_back(std::move(in));
        }
        core_->cv.notify_one();
        if (superseded) {
            {
                std::lock_guard lock(core_->stats_mutex);
                ++core_->superseded;
            }
            core_->reply(error_frame("superseded", "a newer state arrived before this one was processed", superseded));
        }
    }

    void deliver(Outbound out) {
        if (closed_) return;
        if (outbound_.size() >= server_.config.outbound_depth) {
            // Never touch the frame being written (front while writing). Drop the oldest
            // result, or the oldest frame of any kind when there is no result to drop.
            const std::size_t first = writing_ ? 1 : 0;
            std::size_t victim = outbound_.size();
            for (std::size_t i = first; i < outbound_.size(); ++i)
                if (outbound_[i].is_result) {
                    victim = i;
                    break;
                }
            if (victim == outbound_.size() && first < outbound_.size()) victim = first;
            if (victim < outbound_.size()) {
                if (outbound_[victim].is_result) {
                    std::lock_guard lock(core_->stats_mutex);
                    ++core_->dropped_results;
                }
                outbound_.erase(outbound_.begin() + static_cast<std::ptrdiff_t>(victim));
            }
        }
        outbound_.push_back(std::move(out));
        if (!writing_) do_write();
    }

    void do_write() {
        writing_ = true;
        ws_->text(true);
        ws_->async_write(asio::buffer(outbound_.front().text),
                         [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_write(ec); });
    }

    void on_write(beast::error_code ec) {
        writing_ = false;
        if (ec) {
            closed_ = true;
            outbound_.clear();
            return;
        }
        const bool close_after = outbound_.front().close_after;
        outbound_.pop_front();
        if (close_after) {
            closed_ = true;
            outbound_.clear();
            ws_->async_close(websocket::close_code::policy_error, [self = shared_from_this()](beast::error_code) {});
            return;
        }
        if (!outbound_.empty()) do_write();
    }

    beast::tcp_stream stream_;
    Impl& server_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> request_;
    std::optional<websocket::stream<beast::tcp_stream>> ws_;
    beast::flat_buffer read_buffer_;
    std::shared_ptr<SessionCore> core_;
    std::thread worker_;
    std::deque<Outbound> outbound_;
    bool writing_ = false;
    bool closing_ = false;
    bool closed_ = false;
    bool greeted_ = false;
    std::optional<std::int64_t> last_tick_;
};

json Server::Impl::health() const {
    const CalibrationBundle* b = context->bundle();
    json list = json::array();
    {
        std::lock_guard lock(registry_mutex);
        for (const auto& w : sessions)
            if (auto s = w.lock()) list.push_back(s->stats_json());
    }
    return {{"kind", "health"},
            {"status", "ok"},
            {"protocol_version", kProtocolVersion},
            {"uptime_s", std::chrono::duration<double>(steady::now() - started).count()},
            {"human_model", {{"name", context->human().name()}, {"hash", model_hash(context->human())}}},
            {"robot_model", {{"name", context->robot().name()}, {"hash", model_hash(context->robot())}}},
            {"bundle_id", b ? json(b->id()) : json(nullptr)},
            {"session_count", list.size()},
            {"sessions", list}};
}

void Server::Impl::do_accept() {
    acceptor->async_accept([this](beast::error_code ec, tcp::socket socket) {
        if (ec) {
            if (ec != asio::error::operation_aborted) spdlog::warn("accept failed: {}", ec.message());
            if (!acceptor->is_open()) return;
        } else {
            auto conn = std::make_shared<Connection>(std::move(socket), *this);
            {
                std::lock_guard lock(conn_mutex);
                std::erase_if(connections, [](const auto& w) { return w.expired(); });
                connections.push_back(conn);
            }
            conn->start();
        }
        do_accept();
    });
}

Server::Server(std::shared_ptr<const RetargetContext> context, ServerConfig config) : impl_(std::make_unique<Impl>()) {
    if (!context) throw InvalidInput("server needs a retargeting context");
    config.session.validate();
    if (config.outbound_depth < 1) throw InvalidInput("outbound queue depth must be >= 1");
    impl_->context = std::move(context);
    impl_->config = std::move(config);
}

Server::~Server() { stop(); }

std::uint16_t Server::start() {
    Impl& im = *impl_;
    if (im.running) throw Error("server already started");
    beast::error_code ec;
    const auto address = asio::ip::make_address(im.config.host, ec);
    if (ec) throw Error("invalid bind address '" + im.config.host + "': " + ec.message());
    const tcp::endpoint endpoint(address, im.config.port);
    im.acceptor.emplace(im.ioc);
    im.acceptor->open(endpoint.protocol(), ec);
    if (!ec) im.acceptor->set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) im.acceptor->bind(endpoint, ec);
    if (!ec) im.acceptor->listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw Error("cannot bind " + im.config.host + ":" + std::to_string(im.config.port) + ": " + ec.message());
    const std::uint16_t port = im.acceptor->local_endpoint().port();
    im.do_accept();
    im.running = true;
    im.io_thread = std::thread([&im] {
        im.ioc.run();
        im.io_done = true;
    });
    spdlog::info("serving on {}:{}", im.config.host, port);
    return port;
}

void Server::stop() {
    Impl& im = *impl_;
    {
        std::lock_guard lock(im.stop_mutex);
        if (im.stopped) return;
        im.stopped = true;
    }
    im.stop_cv.notify_all();
    if (!im.running) return;
    asio::post(im.ioc, [&im] {
        beast::error_code ec;
        im.acceptor->close(ec);
        std::lock_guard lock(im.conn_mutex);
        for (const auto& w : im.connections)
            if (auto c = w.lock()) c->shutdown();
    });
    const auto deadline = steady::now() + std::chrono::seconds(2);
    while (!im.io_done && steady::now() < deadline) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    im.ioc.stop();
    if (im.io_thread.joinable()) im.io_thread.join();
    im.running = false;
}

void Server::wait() {
    std::unique_lock lock(impl_->stop_mutex);
    impl_->stop_cv.wait(lock, [&] { return impl_->stopped; });
}

nlohmann::json Server::health() const { return impl_->health(); }

}  // namespace respilot
