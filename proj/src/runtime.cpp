#include "h2o/runtime.hpp"

#include <memory>

namespace h2o::node {

json err_body(Err code, const std::string& msg) {
  json j{{"err", err_name(code)}};
  if (!msg.empty()) j["msg"] = msg;
  return j;
}

bool is_err_body(const json& body) {
  return body.is_object() && body.contains("err");
}

Status status_from(const json& body) {
  if (!is_err_body(body)) return Status::good();
  return Status::error(err_from_name(body.at("err").get<std::string>()),
                       body.value("msg", std::string()));
}

void for_each_async(size_t n, std::function<void(size_t, std::function<void(Status)>)> step,
                    std::function<void(Status)> done) {
  if (n == 0) {
    done(Status::good());
    return;
  }
  // Shared index survives the asynchronous hops between iterations.
  auto idx = std::make_shared<size_t>(0);
  auto loop = std::make_shared<std::function<void()>>();
  *loop = [idx, n, step, done, loop]() {
    if (*idx >= n) {
      done(Status::good());
      return;
    }
    const size_t i = (*idx)++;
    step(i, [done, loop](Status st) {
      if (!st.ok()) {
        done(st);
        return;
      }
      (*loop)();
    });
  };
  (*loop)();
}

}  // namespace h2o::node
