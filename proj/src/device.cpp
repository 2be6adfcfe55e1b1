#include "deltasim/device.hpp"

namespace deltasim {

AllocResult MemoryPool::try_alloc(Bytes n) {
  if (n > budget_ - used_) {
    return Insufficient{n - (budget_ - used_)};
  }
  used_ += n;
  if (used_ > high_watermark_) high_watermark_ = used_;
  return Allocated{};
}

void MemoryPool::free(Bytes n) {
  if (n > used_) {
    throw InternalError("pool free of " + std::to_string(n) +
                        " bytes exceeds used " + std::to_string(used_));
  }
  used_ -= n;
}

std::pair<MicroTime, MicroTime> Stream::submit(MicroTime now,
                                               MicroDur duration,
                                               std::string label,
                                               NodeId node) {
  MicroTime start = now > busy_until_ ? now : busy_until_;
  MicroTime end = start + duration;
  busy_until_ = end;
  busy_total_ += duration;
  log_.push_back({start, end, std::move(label), node});
  return {start, end};
}

MicroDur Clock::wait_for(MicroTime t) {
  if (t <= now_) return 0;
  MicroDur stall = t - now_;
  now_ = t;
  return stall;
}

void Clock::advance_to(MicroTime t) {
  if (t > now_) now_ = t;
}

}  // namespace deltasim
