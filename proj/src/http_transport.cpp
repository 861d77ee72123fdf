#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "hvcu/errors.hpp"
#include "hvcu/model_client.hpp"

namespace hvcu {

namespace {

class HttplibTransport final : public HttpTransport {
public:
    HttplibTransport(const std::string& base_url, std::chrono::milliseconds timeout) {
        const auto scheme_end = base_url.find("://");
        if (scheme_end == std::string::npos) {
            throw InvariantError("api base must include a scheme: " + base_url);
        }
        const auto path_start = base_url.find('/', scheme_end + 3);
        const std::string origin = base_url.substr(0, path_start);
        if (path_start != std::string::npos) prefix_ = base_url.substr(path_start);
        while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();

        client_ = std::make_unique<httplib::Client>(origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
        client_->set_connection_timeout(secs.count(), usecs.count());
        client_->set_read_timeout(secs.count(), usecs.count());
        client_->set_write_timeout(secs.count(), usecs.count());
    }

    HttpReply post(const std::string& path, const std::string& body,
                   const HttpHeaders& headers) override {
        httplib::Headers h;
        std::string content_type = "application/json";
        for (const auto& [k, v] : headers) {
            if (k == "Content-Type") {
                content_type = v;
            } else {
                h.emplace(k, v);
            }
        }
        auto result = client_->Post(prefix_ + path, h, body, content_type);
        if (!result) return HttpReply{0, {}, httplib::to_string(result.error())};
        return HttpReply{result->status, result->body, {}};
    }

private:
    std::unique_ptr<httplib::Client> client_;
    std::string prefix_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url,
                                                   std::chrono::milliseconds timeout) {
    return std::make_unique<HttplibTransport>(base_url, timeout);
}

}  // namespace hvcu
