#pragma once

// Hardware-derived energy accounting. Ledgers count integer picojoules so the
// conservation identity (initial = remaining + consumed) holds exactly rather
// than to floating-point tolerance.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ctrack {

/// Energy quantity in picojoules.
class Energy {
 public:
  constexpr Energy() = default;
  static constexpr Energy from_pj(std::int64_t pj) { return Energy(pj); }
  static Energy from_joules(double j) {
    if (!(j >= 0.0) || !std::isfinite(j)) throw std::invalid_argument("Energy: must be finite and >= 0");
    return Energy(static_cast<std::int64_t>(std::llround(j * 1e12)));
  }

  constexpr std::int64_t pj() const { return pj_; }
  constexpr double joules() const { return static_cast<double>(pj_) * 1e-12; }

  constexpr Energy operator+(Energy o) const { return Energy(pj_ + o.pj_); }
  constexpr Energy operator-(Energy o) const { return Energy(pj_ - o.pj_); }
  constexpr Energy& operator+=(Energy o) { pj_ += o.pj_; return *this; }
  constexpr Energy& operator-=(Energy o) { pj_ -= o.pj_; return *this; }
  constexpr Energy operator*(std::int64_t k) const { return Energy(pj_ * k); }
  constexpr auto operator<=>(const Energy&) const = default;

 private:
  constexpr explicit Energy(std::int64_t pj) : pj_(pj) {}
  std::int64_t pj_ = 0;
};

struct EnergyParams {
  double p_gps = 0.074;        // W
  double t_gps_lock = 5.0;     // s, hot start
  double p_mcu = 0.0132;       // W
  double p_radio = 0.099;      // W, tx and rx alike
  double packet_bits = 80.0;
  double channel_bit_rate = 256000.0;
  double t_rt_rounded = 0.31e-3;  // s, as tabulated
  bool exact_t_rt = false;        // use packet_bits / channel_bit_rate instead
  double i_nm = 110e-6;        // A
  double i_sm = 1e-6;          // A
  double p_nm = 275e-6;        // W @ 2.5 V
  double p_sm = 2.5e-6;        // W @ 2.5 V
  double dc_accmag = 0.25;
  double p_sb = 1.25e-6;       // W
  double e_misc = 54.0;        // J per full track
  double track_s = 43200.0;
  double battery_j = 3996.0;

  double t_rt() const { return exact_t_rt ? packet_bits / channel_bit_rate : t_rt_rounded; }

  void validate() const {
    auto need = [](double v, const char* field, bool allow_zero = false) {
      if (!std::isfinite(v) || v < 0.0 || (!allow_zero && v == 0.0))
        throw std::invalid_argument(std::string("EnergyParams.") + field + ": must be " +
                                    (allow_zero ? ">= 0" : "> 0"));
    };
    need(p_gps, "p_gps", true);
    need(t_gps_lock, "t_gps_lock", true);
    need(p_mcu, "p_mcu", true);
    need(p_radio, "p_radio", true);
    need(packet_bits, "packet_bits");
    need(channel_bit_rate, "channel_bit_rate");
    need(t_rt_rounded, "t_rt_rounded");
    need(p_nm, "p_nm", true);
    need(p_sm, "p_sm", true);
    need(p_sb, "p_sb", true);
    need(e_misc, "e_misc", true);
    need(track_s, "track_s");
    need(battery_j, "battery_j");
    if (dc_accmag < 0.0 || dc_accmag > 1.0)
      throw std::invalid_argument("EnergyParams.dc_accmag: must be in [0,1]");
    // Tabulated transfer time must agree with S / CBR to its printed precision.
    if (std::abs(t_rt_rounded - packet_bits / channel_bit_rate) > 0.5e-5 + 1e-12)
      throw std::invalid_argument("EnergyParams.t_rt_rounded: inconsistent with packet_bits/channel_bit_rate");
  }
};

/// One hot-start GPS fix: lock time times (GPS + MCU) power.
inline double gps_fix_cost(const EnergyParams& p) { return p.t_gps_lock * (p.p_gps + p.p_mcu); }

/// One packet sent or received.
inline double radio_msg_cost(const EnergyParams& p) { return p.t_rt() * (p.p_mcu + p.p_radio); }

/// One second of duty-cycled accelerometer + magnetometer operation.
inline double accmag_cost_per_second(const EnergyParams& p) {
  return p.dc_accmag * p.p_nm + (1.0 - p.dc_accmag) * p.p_sm;
}

/// Standby energy by the power-times-time formula; reported for reference only,
/// the ledger charges the tabulated compensation constant.
inline double standby_energy_formula(const EnergyParams& p) { return p.track_s * p.p_sb; }

enum class EnergyCategory : std::size_t { Gps = 0, Tx = 1, Rx = 2, AccMag = 3, Misc = 4 };
inline constexpr std::size_t kEnergyCategories = 5;

inline const char* to_string(EnergyCategory c) {
  switch (c) {
    case EnergyCategory::Gps: return "gps";
    case EnergyCategory::Tx: return "tx";
    case EnergyCategory::Rx: return "rx";
    case EnergyCategory::AccMag: return "accmag";
    case EnergyCategory::Misc: return "misc";
  }
  return "?";
}

class EnergyLedger {
 public:
  EnergyLedger() = default;
  explicit EnergyLedger(Energy initial) : initial_(initial), remaining_(initial) {}

  Energy initial() const { return initial_; }
  Energy remaining() const { return remaining_; }
  Energy consumed(EnergyCategory c) const { return consumed_[static_cast<std::size_t>(c)]; }
  Energy consumed_total() const {
    Energy s;
    for (const auto& e : consumed_) s += e;
    return s;
  }
  Energy dropped() const { return dropped_; }
  std::size_t dropped_charges() const { return dropped_count_; }
  bool alive() const { return remaining_.pj() > 0; }

  /// Draws up to `amount`, clamping at empty. Charging a dead node only
  /// bumps the dropped-charge counter.
  void charge(EnergyCategory c, Energy amount) {
    if (amount.pj() < 0) throw std::invalid_argument("EnergyLedger::charge: negative amount");
    if (!alive()) {
      dropped_ += amount;
      ++dropped_count_;
      return;
    }
    const Energy drawn = amount < remaining_ ? amount : remaining_;
    remaining_ -= drawn;
    consumed_[static_cast<std::size_t>(c)] += drawn;
    dropped_ += amount - drawn;
  }

  /// Dropped energy was never drawn from the battery, so it sits outside
  /// the identity and is reported separately.
  bool conserved() const { return initial_ == remaining_ + consumed_total(); }

 private:
  Energy initial_;
  Energy remaining_;
  std::array<Energy, kEnergyCategories> consumed_{};
  Energy dropped_;
  std::size_t dropped_count_ = 0;
};

inline EnergyLedger charge(EnergyLedger ledger, EnergyCategory c, double amount_j) {
  ledger.charge(c, Energy::from_joules(amount_j));
  return ledger;
}

/// Prorated share of the miscellaneous compensation for `seconds_alive`.
inline Energy misc_share(double seconds_alive, const EnergyParams& p) {
  if (seconds_alive < 0.0 || seconds_alive > p.track_s + 1e-9)
    throw std::invalid_argument("misc_charge: seconds_alive outside [0, track_s]");
  return Energy::from_joules(p.e_misc * seconds_alive / p.track_s);
}

inline void misc_charge(EnergyLedger& ledger, double seconds_alive, const EnergyParams& p) {
  ledger.charge(EnergyCategory::Misc, misc_share(seconds_alive, p));
}

/// Pre-rounded per-activity costs for the simulation hot loop.
struct CostTable {
  Energy gps_fix;
  Energy radio_msg;
  Energy accmag_second;
  Energy misc_second;

  explicit CostTable(const EnergyParams& p)
      : gps_fix(Energy::from_joules(gps_fix_cost(p))),
        radio_msg(Energy::from_joules(radio_msg_cost(p))),
        accmag_second(Energy::from_joules(accmag_cost_per_second(p))),
        misc_second(misc_share(1.0, p)) {}
};

}  // namespace ctrack
