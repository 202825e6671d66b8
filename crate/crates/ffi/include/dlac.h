#ifndef DLAC_H
#define DLAC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Matches the CLI exit-code contract.
 */
typedef enum DlacStatus {
  /**
   * Success.
   */
  DLAC_STATUS_OK = 0,
  /**
   * Simulator or stream invariant violated; state may be inconsistent.
   */
  DLAC_STATUS_INTERNAL = 1,
  /**
   * Bad arguments, files or model contents.
   */
  DLAC_STATUS_INPUT = 2,
  /**
   * The model cannot be placed on the requested device variant.
   */
  DLAC_STATUS_PLANNING = 3,
} DlacStatus;

/**
 * Opaque compiled model handle.
 */
typedef struct DlacModel DlacModel;

/**
 * Device variant selector.
 */
typedef struct DlacVariant {
  /**
   * Processing elements, 1..=4096.
   */
  uint32_t pe_count;
  /**
   * On-chip memory in bytes, at least 1024.
   */
  uint64_t sram_bytes;
  /**
   * 0 = output-channel parallel, 1 = input-channel parallel.
   */
  uint32_t parallel_mode;
  /**
   * 0 = depthwise on CPU, 1 = emulated per-channel, 2 = native.
   */
  uint32_t dw_mode;
} DlacVariant;

/**
 * Shape and size of one model input or output.
 */
typedef struct DlacTensorInfo {
  /**
   * Number of used entries in `dims`.
   */
  uintptr_t rank;
  uint64_t dims[8];
  /**
   * 1 for int8, 4 for int32.
   */
  uint32_t elem_bytes;
  /**
   * Total buffer size in bytes.
   */
  uint64_t byte_len;
} DlacTensorInfo;

/**
 * Cost counters for one run. DMA cycles are accounted separately from
 * compute cycles; `utilization` is macs / (pe_count * cycles).
 */
typedef struct DlacMetrics {
  uint64_t cycles;
  uint64_t macs;
  uint64_t dma_bytes;
  uint64_t dma_cycles;
  uint64_t register_writes;
  uint64_t issues;
  double utilization;
} DlacMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dlac_version(void);

/**
 * Message for the most recent failure on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *dlac_last_error(void);

/**
 * Compiles the model in `model_dir` (model.json + weights.bin) for a device
 * variant. `cut_at_barriers` nonzero makes barrier requantizes terminate
 * accelerator regions. On success `*out` owns the handle.
 *
 * # Safety
 * `model_dir` must be a NUL-terminated string; `out` must be a valid
 * location to store the handle.
 */
enum DlacStatus dlac_compile(const char *model_dir,
                             const struct DlacVariant *variant,
                             uint32_t cut_at_barriers,
                             struct DlacModel **out);

/**
 * Writes a compiled artifact directory (manifest, partition, plans and
 * command streams) for later [`dlac_load`].
 *
 * # Safety
 * `model` must be a live handle from this library; `dir` a NUL-terminated
 * string.
 */
enum DlacStatus dlac_save(const struct DlacModel *model, const char *dir);

/**
 * Loads an artifact directory produced by [`dlac_save`], revalidating its
 * contents. On success `*out` owns the handle.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` a valid store location.
 */
enum DlacStatus dlac_load(const char *dir, struct DlacModel **out);

/**
 * Frees a handle. Null is a no-op.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void dlac_model_free(struct DlacModel *model);

/**
 * Number of model inputs. Null yields 0.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uintptr_t dlac_input_count(const struct DlacModel *model);

/**
 * Number of model outputs. Null yields 0.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uintptr_t dlac_output_count(const struct DlacModel *model);

/**
 * Shape and byte size of input `index`.
 *
 * # Safety
 * `model` must be a live handle; `info` a valid store location.
 */
enum DlacStatus dlac_input_info(const struct DlacModel *model,
                                uintptr_t index,
                                struct DlacTensorInfo *info);

/**
 * Shape and byte size of output `index`.
 *
 * # Safety
 * `model` must be a live handle; `info` a valid store location.
 */
enum DlacStatus dlac_output_info(const struct DlacModel *model,
                                 uintptr_t index,
                                 struct DlacTensorInfo *info);

/**
 * Copies the NUL-terminated name of input `index` into `buf` (truncated
 * names return an error after writing what fits).
 *
 * # Safety
 * `buf` must hold at least `cap` bytes.
 */
enum DlacStatus dlac_input_name(const struct DlacModel *model,
                                uintptr_t index,
                                char *buf,
                                uintptr_t cap);

/**
 * Copies the NUL-terminated name of output `index` into `buf`.
 *
 * # Safety
 * `buf` must hold at least `cap` bytes.
 */
enum DlacStatus dlac_output_name(const struct DlacModel *model,
                                 uintptr_t index,
                                 char *buf,
                                 uintptr_t cap);

/**
 * Executes the model. `inputs[i]`/`input_lens[i]` supply each input's bytes
 * (exact size per [`dlac_input_info`]); `outputs[i]`/`output_lens[i]`
 * receive each output (exact size per [`dlac_output_info`]; pass
 * `n_outputs == 0` to discard). `verify` nonzero cross-checks against the
 * reference interpreter. `metrics` may be null.
 *
 * # Safety
 * All arrays must cover their stated lengths and the model handle must be
 * live.
 */
enum DlacStatus dlac_run(const struct DlacModel *model,
                         const uint8_t *const *inputs,
                         const uintptr_t *input_lens,
                         uintptr_t n_inputs,
                         uint8_t **outputs,
                         const uintptr_t *output_lens,
                         uintptr_t n_outputs,
                         uint32_t verify,
                         struct DlacMetrics *metrics);

/**
 * Executes the model on deterministic seeded inputs, discarding outputs.
 * Useful for costing a variant without marshalling tensors.
 *
 * # Safety
 * `model` must be a live handle; `metrics` may be null.
 */
enum DlacStatus dlac_run_seeded(const struct DlacModel *model,
                                uint64_t seed,
                                uint32_t verify,
                                struct DlacMetrics *metrics);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLAC_H */
