#pragma once

#include <string>

namespace vmtune {

// One tick's observation of a VM.
struct VmInstantMetrics {
  double cpu_usage = 0.0;  // granted / (vcpus * core_ghz)
  double cpu_ready = 0.0;  // fraction of the capped request that was not granted
  double mem_usage = 0.0;  // resident / allocated
  double swap_rate = 0.0;  // pages/s
  double achieved_iops = 0.0;
  double io_latency_ms = 0.0;

  friend bool operator==(const VmInstantMetrics&, const VmInstantMetrics&) = default;
};

struct TelemetrySample {
  std::string vm_id;
  double timestamp_s = 0.0;
  VmInstantMetrics metrics;

  friend bool operator==(const TelemetrySample&, const TelemetrySample&) = default;
};

}  // namespace vmtune
