#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dpm/vocab.hpp"

namespace dpm {

// One labeled sentence pair (Q, P, y).
struct Example {
  TokenIds s1;
  TokenIds s2;
  std::size_t label = 0;
  std::string raw_s1;
  std::string raw_s2;
};

using Dataset = std::vector<Example>;

}  // namespace dpm
