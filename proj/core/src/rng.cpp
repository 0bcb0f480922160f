#include "pathogan/rng.hpp"

#include <sstream>

namespace pathogan {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
}

}  // namespace pathogan
