#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mmg {

struct TraceRow {
  int64_t step = 0;
  std::map<std::string, double> values;
};

}  // namespace mmg
