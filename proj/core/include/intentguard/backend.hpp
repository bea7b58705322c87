#pragma once

#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "intentguard/chat.hpp"

namespace intentguard {

/// Counting gate used to bound in-flight calls per backend.
class InFlightLimit {
 public:
  explicit InFlightLimit(int limit) : limit_(limit > 0 ? limit : 1) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return active_ < limit_; });
    ++active_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      --active_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int limit_;
  int active_ = 0;
};

class InFlightGuard {
 public:
  explicit InFlightGuard(InFlightLimit& limit) : limit_(limit) { limit_.acquire(); }
  ~InFlightGuard() { limit_.release(); }
  InFlightGuard(const InFlightGuard&) = delete;
  InFlightGuard& operator=(const InFlightGuard&) = delete;

 private:
  InFlightLimit& limit_;
};

/// Model backend: remote chat endpoint, local model, or deterministic script.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  /// Generate an assistant completion. `transcript` must already be valid;
  /// prefer the free function generate() which validates first.
  virtual Completion generate_impl(const ChatTranscript& transcript, const GenParams& params) = 0;

  /// Per-token log-probabilities of `continuation` after `transcript`.
  /// Default: capability not supported.
  virtual std::vector<double> token_logprobs_impl(const ChatTranscript& transcript,
                                                  const std::string& continuation);

  InFlightLimit& in_flight() { return in_flight_; }

 protected:
  explicit Backend(int in_flight_limit = 8) : in_flight_(in_flight_limit) {}

 private:
  InFlightLimit in_flight_;
};

/// Validates the transcript and params, checks declared capabilities, then
/// dispatches to the backend. Invalid transcripts never reach a backend.
Completion generate(Backend& backend, const ChatTranscript& transcript, const GenParams& params);

/// Validates inputs and capability, then returns one log-probability per
/// continuation token (each finite and <= 0).
std::vector<double> token_logprobs(Backend& backend, const ChatTranscript& transcript,
                                   const std::string& continuation);

}  // namespace intentguard
