#ifndef SOUPSEARCH_H
#define SOUPSEARCH_H

/* Generated by cbindgen from the soupsearch-ffi crate. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes shared by every exported function.
typedef enum ss_status {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_IO = 3,
  SS_STATUS_FORMAT = 4,
  SS_STATUS_MERGE = 5,
  SS_STATUS_DEGENERATE_WEIGHTS = 6,
  SS_STATUS_OPTIMIZER = 7,
  SS_STATUS_ANALYSIS = 8,
  SS_STATUS_BUFFER_TOO_SMALL = 9,
  SS_STATUS_NOT_FOUND = 10,
  SS_STATUS_PANIC = 99,
} ss_status;

// An in-memory checkpoint: named f32 tensors.
typedef struct ss_checkpoint ss_checkpoint;

// A CMA-ES instance that maximizes the fitness it is told.
typedef struct ss_optimizer ss_optimizer;

// An ordered pool of checkpoints sharing one schema.
typedef struct ss_pool ss_pool;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on the calling thread, or an empty
// string after a success. The pointer stays valid until the next call into
// this library on the same thread.
const char *ss_last_error_message(void);

// Creates an empty checkpoint with the given id.
//
// # Safety
// `id` must be a NUL-terminated string and `out` a valid pointer.
enum ss_status ss_checkpoint_new(const char *id, struct ss_checkpoint **out);

// Adds a tensor, copying `data`. `numel` must equal the product of the
// `ndim` entries of `shape`.
//
// # Safety
// `shape` must point to `ndim` values and `data` to `numel` values.
enum ss_status ss_checkpoint_add_tensor(struct ss_checkpoint *ckpt,
                                        const char *name,
                                        const size_t *shape,
                                        size_t ndim,
                                        const float *data,
                                        size_t numel);

// Reads a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum ss_status ss_checkpoint_read(const char *path, struct ss_checkpoint **out);

// Writes a checkpoint file atomically.
//
// # Safety
// `ckpt` must be a live handle and `path` a NUL-terminated string.
enum ss_status ss_checkpoint_write(const struct ss_checkpoint *ckpt, const char *path);

// Number of tensors in the checkpoint.
//
// # Safety
// `ckpt` must be a live handle and `out` a valid pointer.
enum ss_status ss_checkpoint_tensor_count(const struct ss_checkpoint *ckpt, size_t *out);

// Element count of the named tensor.
//
// # Safety
// `ckpt` must be a live handle, `name` a NUL-terminated string and `out` a
// valid pointer.
enum ss_status ss_checkpoint_tensor_numel(const struct ss_checkpoint *ckpt,
                                          const char *name,
                                          size_t *out);

// Copies the named tensor's values into `buf`, which must hold at least
// its element count.
//
// # Safety
// `buf` must point to `cap` writable floats.
enum ss_status ss_checkpoint_copy_tensor(const struct ss_checkpoint *ckpt,
                                         const char *name,
                                         float *buf,
                                         size_t cap);

// Releases a checkpoint. Null is ignored.
//
// # Safety
// `ckpt` must be null or a handle not yet freed.
void ss_checkpoint_free(struct ss_checkpoint *ckpt);

// Clamps negatives to zero and rescales to sum to one.
// Fails with `SS_STATUS_DEGENERATE_WEIGHTS` when nothing positive remains.
//
// # Safety
// `raw` and `out` must each point to `n` values; they may alias.
enum ss_status ss_normalize(const double *raw, size_t n, double *out);

// Opens a pool directory (ordered by `pool.json`, else by file name).
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum ss_status ss_pool_open_dir(const char *dir, struct ss_pool **out);

// Number of checkpoints in the pool.
//
// # Safety
// `pool` must be a live handle and `out` a valid pointer.
enum ss_status ss_pool_len(const struct ss_pool *pool, size_t *out);

// Merges the pool with `n` raw weights, which are normalized first as in
// [`ss_normalize`]. The result is a new checkpoint handle.
//
// # Safety
// `weights` must point to `n` values and `out` be a valid pointer.
enum ss_status ss_pool_merge(const struct ss_pool *pool,
                             const double *weights,
                             size_t n,
                             struct ss_checkpoint **out);

// Releases a pool. Null is ignored.
//
// # Safety
// `pool` must be null or a handle not yet freed.
void ss_pool_free(struct ss_pool *pool);

// Creates an optimizer at mean `m0` (length `dim`). A `lambda` of 0 picks
// the default population size.
//
// # Safety
// `m0` must point to `dim` values and `out` be a valid pointer.
enum ss_status ss_optimizer_new(const double *m0,
                                size_t dim,
                                double sigma0,
                                size_t lambda,
                                uint64_t seed,
                                struct ss_optimizer **out);

// Search dimension.
//
// # Safety
// `opt` must be a live handle and `out` a valid pointer.
enum ss_status ss_optimizer_dim(const struct ss_optimizer *opt, size_t *out);

// Population size per generation.
//
// # Safety
// `opt` must be a live handle and `out` a valid pointer.
enum ss_status ss_optimizer_lambda(const struct ss_optimizer *opt, size_t *out);

// Samples one candidate into `x` (length `dim`) and its token into `token`.
//
// # Safety
// `x` must point to `dim` writable values and `token` be a valid pointer.
enum ss_status ss_optimizer_ask(struct ss_optimizer *opt, double *x, size_t dim, uint64_t *token);

// Reports the fitness (higher is better) of an asked candidate.
//
// # Safety
// `opt` must be a live handle.
enum ss_status ss_optimizer_tell(struct ss_optimizer *opt, uint64_t token, double fitness);

// Adds an externally evaluated point to the current generation.
//
// # Safety
// `x` must point to `dim` values.
enum ss_status ss_optimizer_inject(struct ss_optimizer *opt,
                                   const double *x,
                                   size_t dim,
                                   double fitness);

// Copies the current mean into `out` (length `dim`).
//
// # Safety
// `out` must point to `dim` writable values.
enum ss_status ss_optimizer_mean(const struct ss_optimizer *opt, double *out, size_t dim);

// Current global step size.
//
// # Safety
// `opt` must be a live handle and `out` a valid pointer.
enum ss_status ss_optimizer_sigma(const struct ss_optimizer *opt, double *out);

// Releases an optimizer. Null is ignored.
//
// # Safety
// `opt` must be null or a handle not yet freed.
void ss_optimizer_free(struct ss_optimizer *opt);

// Spearman rank correlation of two series of length `n`, ties averaged.
//
// # Safety
// `x` and `y` must each point to `n` values and `out` be a valid pointer.
enum ss_status ss_spearman(const double *x, const double *y, size_t n, double *out);

// Library version as a static NUL-terminated string.
const char *ss_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOUPSEARCH_H */
