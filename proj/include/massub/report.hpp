#pragma once

#include "massub/harness.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace massub {

/// Shortest round-trip decimal form of v.
std::string format_number(double v);

/// estimator,coordinate,bias,msd,rmse,esd with 1-based coordinates. No timing fields.
void write_report_csv(const ReplicationReport& report, std::ostream& out);

/// estimator,median_seconds,runs for timing_report rows, or the per-estimator
/// mean fit time of a replication report.
void write_timings_csv(const std::vector<TimingRow>& rows, std::ostream& out);
void write_timings_csv(const ReplicationReport& report, std::ostream& out);

struct RmsePoint {
  double n = 0.0;
  ReplicationReport report;
};

/// Total RMSE sqrt(sum_j rmse_j^2) against n, one line per estimator.
void write_rmse_svg(const std::vector<RmsePoint>& points, std::ostream& out);

}  // namespace massub
