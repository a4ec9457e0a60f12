#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace zdp::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeFailure = 1;
inline constexpr int kUsageError = 2;

struct CommonOptions {
  std::string config;  // empty: built-in defaults
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

struct TrainOptions {
  CommonOptions common;
  std::string out;
  std::string log;
  std::string save_pretrained;
  bool no_pretrain = false;
  bool timing = false;
};

struct SimulateOptions {
  CommonOptions common;
  std::string weights;
  bool raibert = false;
  std::vector<double> x0;  // px,py,vx,vy
  std::optional<int> hops;
  std::vector<std::string> disturb;  // hop:vx:vy
  std::string log;
};

struct EvalOptions {
  CommonOptions common;
  std::string weights;
  bool raibert = false;
  std::string suite = "all";
  std::string out;
};

struct WaypointOptions {
  CommonOptions common;
  std::string weights;
  bool raibert = false;
  std::string waypoints;
  std::string log;
  std::string track;
};

int cmd_train(const TrainOptions& o);
int cmd_simulate(const SimulateOptions& o);
int cmd_eval(const EvalOptions& o);
int cmd_waypoints(const WaypointOptions& o);

}  // namespace zdp::cli
