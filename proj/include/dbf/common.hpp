#pragma once

#include <stdexcept>
#include <string>

namespace dbf {

// Tensor shape disagreement; the message names both shapes.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value left the finite domain (NaN/Inf) or an input is numerically
// degenerate (zero-norm vector, fully masked attention row).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration. The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem or serialization failure. The CLI maps this to exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Modality { text = 0, visual = 1, audio = 2 };

inline char modality_tag(Modality m) {
  switch (m) {
    case Modality::text: return 't';
    case Modality::visual: return 'v';
    case Modality::audio: return 'a';
  }
  return '?';
}

inline Modality modality_from_tag(char c) {
  switch (c) {
    case 't': return Modality::text;
    case 'v': return Modality::visual;
    case 'a': return Modality::audio;
  }
  throw ConfigError(std::string("unknown modality tag '") + c + "' (expected t, v or a)");
}

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::visual: return "visual";
    case Modality::audio: return "audio";
  }
  return "?";
}

}  // namespace dbf
