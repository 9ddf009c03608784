#pragma once

// Op-level cost tally. While a CostRecorder is alive on a thread, every
// tensor op executed on that thread adds its multiply-accumulates and
// elementwise outputs to the recorder, attributed to the current component
// label. Attention code additionally reports attention-map entries.

#include <cstdint>
#include <map>
#include <string>
#include <utility>

namespace crossvit {

struct CostCounts {
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;
  std::uint64_t attn_entries = 0;

  CostCounts& operator+=(const CostCounts& o) {
    macs += o.macs;
    elementwise += o.elementwise;
    attn_entries += o.attn_entries;
    return *this;
  }
  friend bool operator==(const CostCounts&, const CostCounts&) = default;
};

class CostRecorder {
 public:
  CostRecorder() : previous_(active_) { active_ = this; }
  ~CostRecorder() { active_ = previous_; }
  CostRecorder(const CostRecorder&) = delete;
  CostRecorder& operator=(const CostRecorder&) = delete;

  const std::map<std::string, CostCounts>& by_component() const { return rows_; }
  CostCounts total() const {
    CostCounts t;
    for (const auto& [_, c] : rows_) t += c;
    return t;
  }

  static CostRecorder* active() { return active_; }
  CostCounts& current() { return rows_[label_]; }

  // Sets the component label for subsequent ops; restores on destruction.
  class Scope {
   public:
    explicit Scope(std::string label) {
      if (auto* r = active_) {
        recorder_ = r;
        saved_ = std::exchange(r->label_, std::move(label));
      }
    }
    ~Scope() {
      if (recorder_) recorder_->label_ = std::move(saved_);
    }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    CostRecorder* recorder_ = nullptr;
    std::string saved_;
  };

 private:
  inline static thread_local CostRecorder* active_ = nullptr;
  CostRecorder* previous_;
  std::string label_ = "other";
  std::map<std::string, CostCounts> rows_;
};

namespace detail {

inline void tally_macs(std::uint64_t n) {
  if (auto* r = CostRecorder::active()) r->current().macs += n;
}
inline void tally_elementwise(std::uint64_t n) {
  if (auto* r = CostRecorder::active()) r->current().elementwise += n;
}
inline void tally_attention(std::uint64_t entries) {
  if (auto* r = CostRecorder::active()) r->current().attn_entries += entries;
}

}  // namespace detail
}  // namespace crossvit
