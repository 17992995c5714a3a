// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

// Guidance wire protocol.
//
// Request:  "SGDG" | u32 version (1) | u32 metadata length | JSON metadata | tensors
// Response: "SGDR" | u32 version (1) | u32 metadata length | JSON metadata | tensor
// Error:    "SGDE" | u32 version (1) | u32 message length  | UTF-8 message
//
// Integers are little-endian. Tensors are little-endian f32, planar, row-major,
// in the order of the metadata "tensors" manifest. Request tensors are
// rendered (3 ch, already noised to level t), ref_prev, ref_next (3 ch),
// depth_target, depth_prev, depth_next (1 ch, 0 marks a missing depth).

#pragma once

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetgs/binary_io.hpp"
#include "streetgs/error.hpp"
#include "streetgs/guidance.hpp"

namespace streetgs::wire {

inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::string_view kRequestMagic = "SGDG";
inline constexpr std::string_view kResponseMagic = "SGDR";
inline constexpr std::string_view kErrorMagic = "SGDE";
inline constexpr std::uint32_t kMaxMetadataBytes = 1u << 20;
inline constexpr std::uint64_t kMaxTensorBytes = 1ull << 31;

using json = nlohmann::json;

namespace detail {

inline void append_image(std::string& out, const Image& img) {
    std::vector<float> buf(img.data().begin(), img.data().end());
    binio::append_span<float>(out, buf);
}

inline void append_depth(std::string& out, const DepthMap& d) {
    std::vector<float> buf(d.values.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = d.valid[i] ? static_cast<float>(d.values[i]) : 0.0f;
    binio::append_span<float>(out, buf);
}

inline Image read_image(binio::Reader& r, int w, int h, int channels) {
    std::vector<float> buf(static_cast<std::size_t>(w) * h * channels);
    r.read_into<float>(buf);
    Image img(w, h, channels);
    std::copy(buf.begin(), buf.end(), img.data().begin());
    return img;
}

inline DepthMap read_depth(binio::Reader& r, int w, int h, int top_mask_rows) {
    std::vector<float> buf(static_cast<std::size_t>(w) * h);
    r.read_into<float>(buf);
    DepthMap d(w, h, top_mask_rows);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (const float v = buf[d.index(y, x)]; v > 0.0f) d.set(y, x, v);
    return d;
}

inline json tensor_entry(const char* name, int channels, int w, int h) {
    return {{"name", name}, {"channels", channels}, {"height", h}, {"width", w}};
}

inline std::string frame(std::string_view magic, const std::string& meta, const std::string& payload) {
    std::string out(magic);
    binio::append<std::uint32_t>(out, kVersion);
    binio::append<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    out += payload;
    return out;
}

struct Header {
    std::string magic;
    std::uint32_t version = 0;
    std::uint32_t length = 0;
};

inline Header parse_header(std::string_view bytes) {
    if (bytes.size() < 12) throw ProtocolError("frame header is shorter than 12 bytes");
    binio::Reader r(bytes);
    Header h;
    h.magic = std::string(r.take(4));
    h.version = r.read<std::uint32_t>();
    h.length = r.read<std::uint32_t>();
    if (h.magic != kRequestMagic && h.magic != kResponseMagic && h.magic != kErrorMagic)
        throw ProtocolError("unknown frame magic");
    if (h.version != kVersion) throw ProtocolError("unsupported protocol version " + std::to_string(h.version));
    if (h.length > kMaxMetadataBytes) throw ProtocolError("metadata block too large");
    return h;
}

/// Byte count of the tensor payload described by a metadata manifest.
inline std::uint64_t payload_bytes(const json& meta) {
    std::uint64_t total = 0;
    for (const auto& t : meta.at("tensors")) {
        const auto c = t.at("channels").get<std::int64_t>();
        const auto h = t.at("height").get<std::int64_t>();
        const auto w = t.at("width").get<std::int64_t>();
        if (c <= 0 || h <= 0 || w <= 0 || c > 4 || h > 16384 || w > 16384) throw ProtocolError("bad tensor shape");
        total += 4ull * std::uint64_t(c * h * w);
        if (total > kMaxTensorBytes) throw ProtocolError("tensor payload too large");
    }
    return total;
}

inline json parse_metadata(std::string_view text) {
    try {
        json meta = json::parse(text);
        if (!meta.is_object() || !meta.contains("tensors") || !meta["tensors"].is_array())
            throw ProtocolError("metadata lacks a tensor manifest");
        return meta;
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("metadata is not valid JSON: ") + e.what());
    }
}

inline void expect_manifest(const json& meta, const std::vector<std::pair<std::string, int>>& expected, int w, int h) {
    const auto& t = meta.at("tensors");
    if (t.size() != expected.size()) throw ProtocolError("unexpected tensor count");
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (t[i].at("name") != expected[i].first || t[i].at("channels") != expected[i].second ||
            t[i].at("width") != w || t[i].at("height") != h)
            throw ProtocolError("tensor " + std::to_string(i) + " does not match the manifest");
    }
}

inline const std::vector<std::pair<std::string, int>>& request_manifest() {
    static const std::vector<std::pair<std::string, int>> m = {
        {"rendered", 3}, {"ref_prev", 3}, {"ref_next", 3}, {"depth_target", 1}, {"depth_prev", 1}, {"depth_next", 1}};
    return m;
}

}  // namespace detail

inline std::string encode_request(const GuidanceRequest& req) {
    req.validate();
    const int w = req.rendered.width(), h = req.rendered.height();
    json meta = {{"request_id", req.request_id},
                 {"width", w},
                 {"height", h},
                 {"strength", req.strength},
                 {"t", req.t},
                 {"t_max", req.t_max},
                 {"t_min", req.t_min},
                 {"seed", req.seed},
                 {"depth_top_mask_rows", req.depth_target.top_mask_rows}};
    json tensors = json::array();
    for (const auto& [name, ch] : detail::request_manifest()) tensors.push_back(detail::tensor_entry(name.c_str(), ch, w, h));
    meta["tensors"] = tensors;
    if (req.view) {
        const auto& k = req.view->intrinsics();
        const auto& p = req.view->pose();
        meta["camera"] = {{"intrinsics", {k.fx, k.fy, k.cx, k.cy, k.width, k.height}},
                          {"rotation_wxyz", {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}},
                          {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
    }
    std::string payload;
    detail::append_image(payload, req.rendered);
    detail::append_image(payload, req.ref_prev);
    detail::append_image(payload, req.ref_next);
    detail::append_depth(payload, req.depth_target);
    detail::append_depth(payload, req.depth_prev);
    detail::append_depth(payload, req.depth_next);
    return detail::frame(kRequestMagic, meta.dump(), payload);
}

inline GuidanceRequest decode_request(std::string_view bytes) {
    const auto hdr = detail::parse_header(bytes);
    if (hdr.magic != kRequestMagic) throw ProtocolError("expected a request frame");
    binio::Reader r(bytes.substr(12));
    if (r.remaining() < hdr.length) throw ProtocolError("truncated metadata");
    const json meta = detail::parse_metadata(r.take(hdr.length));
    try {
        GuidanceRequest req;
        const int w = meta.at("width").get<int>(), h = meta.at("height").get<int>();
        detail::expect_manifest(meta, detail::request_manifest(), w, h);
        if (r.remaining() != detail::payload_bytes(meta)) throw ProtocolError("tensor payload size mismatch");
        req.request_id = meta.at("request_id").get<std::string>();
        req.strength = meta.at("strength").get<double>();
        req.t = meta.at("t").get<int>();
        req.t_max = meta.value("t_max", 10);
        req.t_min = meta.value("t_min", 0);
        req.seed = meta.at("seed").get<std::uint64_t>();
        const int mask_rows = meta.value("depth_top_mask_rows", 0);
        req.rendered = detail::read_image(r, w, h, 3);
        req.ref_prev = detail::read_image(r, w, h, 3);
        req.ref_next = detail::read_image(r, w, h, 3);
        req.depth_target = detail::read_depth(r, w, h, mask_rows);
        req.depth_prev = detail::read_depth(r, w, h, mask_rows);
        req.depth_next = detail::read_depth(r, w, h, mask_rows);
        if (meta.contains("camera")) {
            const auto& c = meta["camera"];
            const auto k = c.at("intrinsics");
            const auto q = c.at("rotation_wxyz");
            const auto t = c.at("translation");
            RigidPose pose;
            pose.rotation = Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
            pose.translation = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
            req.view = CameraView(Intrinsics{k[0].get<double>(), k[1].get<double>(), k[2].get<double>(),
                                             k[3].get<double>(), k[4].get<int>(), k[5].get<int>()},
                                  pose);
        }
        req.validate();
        return req;
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("bad request metadata: ") + e.what());
    } catch (const ProtocolError&) {
        throw;
    } catch (const Error& e) {
        throw ProtocolError(e.what());
    }
}

inline std::string encode_response(const GuidanceResponse& resp) {
    const int w = resp.guidance.width(), h = resp.guidance.height();
    json meta = {{"request_id", resp.request_id},
                 {"width", w},
                 {"height", h},
                 {"provider_id", resp.provider_id},
                 {"t", resp.noise_level_used},
                 {"tensors", json::array({detail::tensor_entry("guidance", 3, w, h)})}};
    std::string payload;
    detail::append_image(payload, resp.guidance);
    return detail::frame(kResponseMagic, meta.dump(), payload);
}

inline std::string encode_error(const std::string& message) {
    std::string out(kErrorMagic);
    binio::append<std::uint32_t>(out, kVersion);
    binio::append<std::uint32_t>(out, static_cast<std::uint32_t>(message.size()));
    return out + message;
}

/// Decodes a response frame; an error frame raises ProviderUnavailable with its message.
inline GuidanceResponse decode_response(std::string_view bytes) {
    const auto hdr = detail::parse_header(bytes);
    binio::Reader r(bytes.substr(12));
    if (r.remaining() < hdr.length) throw ProtocolError("truncated frame");
    if (hdr.magic == kErrorMagic) throw ProviderUnavailable("remote error: " + std::string(r.take(hdr.length)));
    if (hdr.magic != kResponseMagic) throw ProtocolError("expected a response frame");
    const json meta = detail::parse_metadata(r.take(hdr.length));
    try {
        const int w = meta.at("width").get<int>(), h = meta.at("height").get<int>();
        detail::expect_manifest(meta, {{"guidance", 3}}, w, h);
        if (r.remaining() != detail::payload_bytes(meta)) throw ProtocolError("tensor payload size mismatch");
        GuidanceResponse resp;
        resp.request_id = meta.at("request_id").get<std::string>();
        resp.provider_id = meta.value("provider_id", std::string("remote"));
        resp.noise_level_used = meta.at("t").get<int>();
        resp.guidance = detail::read_image(r, w, h, 3);
        return resp;
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("bad response metadata: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Transport

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    static Endpoint parse(const std::string& text) {
        const auto colon = text.rfind(':');
        if (colon == std::string::npos) throw ConfigError("endpoint must be HOST:PORT, got '" + text + "'");
        Endpoint e;
        e.host = text.substr(0, colon);
        const std::string port = text.substr(colon + 1);
        try {
            const long p = std::stol(port);
            if (p <= 0 || p > 65535) throw ConfigError("port out of range: " + port);
            e.port = static_cast<std::uint16_t>(p);
        } catch (const std::logic_error&) {
            throw ConfigError("bad port '" + port + "'");
        }
        if (e.host.empty()) e.host = "127.0.0.1";
        return e;
    }

    std::string str() const { return host + ":" + std::to_string(port); }
};

/// Owned socket descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close(); }

    int fd() const noexcept { return fd_; }
    explicit operator bool() const noexcept { return fd_ >= 0; }
    void close() noexcept {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline int remaining_ms(Clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

inline void wait_for(int fd, short events, Clock::time_point deadline) {
    for (;;) {
        pollfd p{fd, events, 0};
        const int rc = ::poll(&p, 1, remaining_ms(deadline));
        if (rc > 0) return;
        if (rc == 0) throw ProviderTimeout("no progress before the deadline");
        if (errno != EINTR) throw ProviderUnavailable(std::string("poll: ") + std::strerror(errno));
    }
}

inline void send_all(int fd, std::string_view bytes, Clock::time_point deadline) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        wait_for(fd, POLLOUT, deadline);
        const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw ProviderUnavailable(std::string("send: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

/// Reads exactly n bytes. Returns false on a clean EOF before the first byte.
inline bool recv_exact(int fd, std::string& out, std::size_t n, Clock::time_point deadline) {
    const std::size_t start = out.size();
    out.resize(start + n);
    std::size_t got = 0;
    while (got < n) {
        wait_for(fd, POLLIN, deadline);
        const ssize_t r = ::recv(fd, out.data() + start + got, n - got, 0);
        if (r == 0) {
            if (got == 0) {
                out.resize(start);
                return false;
            }
            throw ProviderUnavailable("connection closed mid-frame");
        }
        if (r < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw ProviderUnavailable(std::string("recv: ") + std::strerror(errno));
        }
        got += static_cast<std::size_t>(r);
    }
    return true;
}

}  // namespace detail

/// Reads one complete frame (any magic). Returns an empty string on EOF
/// between frames.
inline std::string read_frame(int fd, std::chrono::milliseconds timeout) {
    const auto deadline = detail::Clock::now() + timeout;
    std::string buf;
    if (!detail::recv_exact(fd, buf, 12, deadline)) return {};
    const auto hdr = detail::parse_header(buf);
    if (!detail::recv_exact(fd, buf, hdr.length, deadline)) throw ProviderUnavailable("connection closed mid-frame");
    if (hdr.magic == kErrorMagic) return buf;
    const json meta = detail::parse_metadata(std::string_view(buf).substr(12));
    const auto payload = detail::payload_bytes(meta);
    if (payload && !detail::recv_exact(fd, buf, payload, deadline))
        throw ProviderUnavailable("connection closed mid-frame");
    return buf;
}

inline void write_frame(int fd, std::string_view bytes, std::chrono::milliseconds timeout) {
    detail::send_all(fd, bytes, detail::Clock::now() + timeout);
}

inline Socket connect_to(const Endpoint& ep, std::chrono::milliseconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(ep.port);
    if (const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0)
        throw ProviderUnavailable("cannot resolve " + ep.str() + ": " + ::gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
    const auto deadline = detail::Clock::now() + timeout;
    std::string last_error = "no address";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK | SOCK_CLOEXEC, ai->ai_protocol));
        if (!s) continue;
        if (::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) != 0) {
            if (errno != EINPROGRESS) {
                last_error = std::strerror(errno);
                continue;
            }
            detail::wait_for(s.fd(), POLLOUT, deadline);
            int err = 0;
            socklen_t len = sizeof(err);
            ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
            if (err != 0) {
                last_error = std::strerror(err);
                continue;
            }
        }
        int one = 1;
        ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        return s;
    }
    throw ProviderUnavailable("cannot connect to " + ep.str() + ": " + last_error);
}

/// Sends one request over a fresh connection and waits for the reply.
inline GuidanceResponse round_trip(const Endpoint& ep, const GuidanceRequest& req, std::chrono::milliseconds timeout) {
    Socket s = connect_to(ep, timeout);
    write_frame(s.fd(), encode_request(req), timeout);
    const std::string reply = read_frame(s.fd(), timeout);
    if (reply.empty()) throw ProviderUnavailable("server closed the connection without replying");
    GuidanceResponse resp = decode_response(reply);
    if (resp.request_id != req.request_id)
        throw ProtocolError("response id '" + resp.request_id + "' does not match request '" + req.request_id + "'");
    return resp;
}

/// Forwards denoising to a guidance service over TCP.
class RemoteProvider final : public GuidanceProvider {
public:
    explicit RemoteProvider(Endpoint ep, std::chrono::milliseconds timeout = std::chrono::seconds(30))
        : ep_(std::move(ep)), timeout_(timeout) {}

    std::string id() const override { return "remote:" + ep_.str(); }

    Image denoise(const Image& noisy, int, const GuidanceRequest& req) override {
        GuidanceRequest wire_req = req;
        wire_req.rendered = noisy;
        return round_trip(ep_, wire_req, timeout_).guidance;
    }

private:
    Endpoint ep_;
    std::chrono::milliseconds timeout_;
};

/// Minimal single-threaded frame server. Each request is answered with the
/// provider's output on level t (already noised inputs are passed through as
/// is), or, in echo mode, with the received `rendered` tensor. Malformed frames
/// get an error frame and the connection stays open.
class GuidanceServer {
public:
    GuidanceServer(std::shared_ptr<GuidanceProvider> provider, bool echo, std::uint16_t port = 0)
        : provider_(std::move(provider)), echo_(echo) {
        listener_ = Socket(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
        if (!listener_) throw ProviderUnavailable(std::string("socket: ") + std::strerror(errno));
        int one = 1;
        ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(port);
        if (::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
            ::listen(listener_.fd(), 16) != 0)
            throw ProviderUnavailable(std::string("bind/listen: ") + std::strerror(errno));
        socklen_t len = sizeof(addr);
        ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }

    ~GuidanceServer() { stop(); }

    std::uint16_t port() const noexcept { return port_; }
    Endpoint endpoint() const { return {"127.0.0.1", port_}; }

    void start() {
        running_ = true;
        thread_ = std::thread([this] { serve(); });
    }

    void stop() {
        running_ = false;
        if (thread_.joinable()) thread_.join();
    }

    /// Answers one frame; used by the serving loop and directly by tests.
    std::string handle(std::string_view frame) {
        try {
            const GuidanceRequest req = decode_request(frame);
            GuidanceResponse resp;
            resp.request_id = req.request_id;
            resp.noise_level_used = req.t;
            if (echo_) {
                resp.guidance = req.rendered;
                resp.provider_id = "echo";
            } else {
                resp.guidance = clamp01(provider_->denoise(req.rendered, req.t, req));
                resp.provider_id = provider_->id();
            }
            return encode_response(resp);
        } catch (const std::exception& e) {
            return encode_error(e.what());
        }
    }

private:
    void serve() {
        while (running_) {
            pollfd p{listener_.fd(), POLLIN, 0};
            if (::poll(&p, 1, 50) <= 0) continue;
            Socket client(::accept4(listener_.fd(), nullptr, nullptr, SOCK_CLOEXEC));
            if (!client) continue;
            serve_connection(client);
        }
    }

    void serve_connection(Socket& client) {
        using namespace std::chrono_literals;
        while (running_) {
            pollfd p{client.fd(), POLLIN, 0};
            const int rc = ::poll(&p, 1, 50);
            if (rc == 0) continue;
            if (rc < 0) return;
            std::string frame;
            try {
                frame = read_frame(client.fd(), 30s);
            } catch (const ProtocolError& e) {
                // The stream position is unknown after a bad frame. Drain before answering so
                // bytes sent after the client sees the error are never swallowed.
                try {
                    drain(client.fd());
                    write_frame(client.fd(), encode_error(e.what()), 30s);
                } catch (const Error&) {
                    return;
                }
                continue;
            } catch (const Error&) {
                return;
            }
            if (frame.empty()) return;
            try {
                write_frame(client.fd(), handle(frame), 30s);
            } catch (const Error&) {
                return;
            }
        }
    }

    static void drain(int fd) {
        char buf[4096];
        for (;;) {
            pollfd p{fd, POLLIN, 0};
            if (::poll(&p, 1, 20) <= 0) return;
            if (::recv(fd, buf, sizeof(buf), 0) <= 0) return;
        }
    }

    std::shared_ptr<GuidanceProvider> provider_;
    bool echo_;
    Socket listener_;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::thread thread_;
};

}  // namespace streetgs::wire
