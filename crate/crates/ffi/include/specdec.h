#ifndef SPECDEC_H
#define SPECDEC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdint.h>

typedef enum SpecdecStatus {
  SPECDEC_STATUS_OK = 0,
  SPECDEC_STATUS_NULL_POINTER = 1,
  SPECDEC_STATUS_INVALID_ARGUMENT = 2,
  SPECDEC_STATUS_PARSE = 3,
  // No acceptance rate reaches the requested speedup.
  SPECDEC_STATUS_INFEASIBLE = 4,
  SPECDEC_STATUS_PANIC = 5,
} SpecdecStatus;

typedef enum SpecdecCostMode {
  SPECDEC_COST_MODE_ADDITIVE = 0,
  SPECDEC_COST_MODE_ROOFLINE = 1,
} SpecdecCostMode;

typedef struct SpecdecDraft SpecdecDraft;

typedef struct SpecdecHardware SpecdecHardware;

typedef struct SpecdecModel SpecdecModel;

// Step latency components in seconds.
typedef struct SpecdecBreakdown {
  double param_load_s;
  double kv_load_s;
  double act_load_s;
  double compute_s;
  double total_s;
} SpecdecBreakdown;

typedef struct SpecdecReport {
  double t_target_s;
  double t_draft_s;
  double t_select_s;
  double t_verify_s;
  uint32_t gamma;
  double alpha;
  double omega;
  double t_sd_avg_s;
  double speedup;
} SpecdecReport;

typedef struct SpecdecSimResult {
  uint64_t total_tokens;
  uint64_t total_steps;
  uint64_t uncapped_steps;
  uint64_t misaligned_steps;
  double model_time_s;
  double empirical_omega;
  double empirical_speedup;
} SpecdecSimResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *specdec_last_error_message(void);

// Library version as a static nul-terminated string.
const char *specdec_version(void);

// Parses a hardware JSON configuration into a new handle.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum SpecdecStatus specdec_hardware_from_json(const char *json, struct SpecdecHardware **out);

// Built-in hardware by name, e.g. `8xA100-80GB`.
//
// # Safety
// `name` must be a nul-terminated string and `out` a valid pointer.
enum SpecdecStatus specdec_hardware_preset(const char *name, struct SpecdecHardware **out);

// Releases a hardware handle. Null is ignored.
//
// # Safety
// `handle` must come from this library and not be used afterwards.
void specdec_hardware_free(struct SpecdecHardware *handle);

// Parses a model JSON configuration into a new handle.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum SpecdecStatus specdec_model_from_json(const char *json, struct SpecdecModel **out);

// Built-in model by name, e.g. `llama3-8b`.
//
// # Safety
// `name` must be a nul-terminated string and `out` a valid pointer.
enum SpecdecStatus specdec_model_preset(const char *name, struct SpecdecModel **out);

// Releases a model handle. Null is ignored.
//
// # Safety
// `handle` must come from this library and not be used afterwards.
void specdec_model_free(struct SpecdecModel *handle);

// Parses a draft strategy JSON into a new handle.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum SpecdecStatus specdec_draft_from_json(const char *json, struct SpecdecDraft **out);

// Releases a draft handle. Null is ignored.
//
// # Safety
// `handle` must come from this library and not be used afterwards.
void specdec_draft_free(struct SpecdecDraft *handle);

// Latency of one target step over `n_tokens` positions.
//
// # Safety
// Handles must be live and `out` a valid pointer.
enum SpecdecStatus specdec_decode_step_time(const struct SpecdecHardware *hw,
                                            const struct SpecdecModel *model,
                                            uint64_t batch,
                                            uint64_t seq_len,
                                            uint64_t n_tokens,
                                            enum SpecdecCostMode mode,
                                            struct SpecdecBreakdown *out);

// Expected tokens per verification cycle.
//
// # Safety
// `out` must be a valid pointer.
enum SpecdecStatus specdec_expected_gen_len(uint32_t gamma, double alpha, double *out);

// Speculative decoding report at fixed `gamma` and `alpha`.
//
// # Safety
// Handles must be live and `out` a valid pointer.
enum SpecdecStatus specdec_analyze(const struct SpecdecHardware *hw,
                                   const struct SpecdecModel *model,
                                   const struct SpecdecDraft *draft,
                                   uint64_t batch,
                                   uint64_t seq_len,
                                   uint32_t gamma,
                                   double alpha,
                                   enum SpecdecCostMode mode,
                                   struct SpecdecReport *out);

// Report at the best `gamma` in `1..=gamma_max`.
//
// # Safety
// Handles must be live and `out` a valid pointer.
enum SpecdecStatus specdec_optimize_gamma(const struct SpecdecHardware *hw,
                                          const struct SpecdecModel *model,
                                          const struct SpecdecDraft *draft,
                                          uint64_t batch,
                                          uint64_t seq_len,
                                          double alpha,
                                          uint32_t gamma_max,
                                          enum SpecdecCostMode mode,
                                          struct SpecdecReport *out);

// Smallest acceptance rate reaching `target_speedup`. Returns
// `Infeasible` and leaves `out_alpha` untouched when none does.
//
// # Safety
// Handles must be live and `out_alpha` a valid pointer.
enum SpecdecStatus specdec_min_acceptance(const struct SpecdecHardware *hw,
                                          const struct SpecdecModel *model,
                                          const struct SpecdecDraft *draft,
                                          uint64_t batch,
                                          uint64_t seq_len,
                                          double target_speedup,
                                          uint32_t gamma_max,
                                          enum SpecdecCostMode mode,
                                          double *out_alpha);

// Seeded Monte Carlo run of one batch.
//
// # Safety
// Handles must be live and `out` a valid pointer.
enum SpecdecStatus specdec_simulate(const struct SpecdecHardware *hw,
                                    const struct SpecdecModel *model,
                                    const struct SpecdecDraft *draft,
                                    uint64_t seed,
                                    uint64_t batch,
                                    uint64_t context_len,
                                    uint64_t gen_len,
                                    uint32_t gamma,
                                    double alpha,
                                    enum SpecdecCostMode mode,
                                    struct SpecdecSimResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECDEC_H */
