#ifndef DSLP_H
#define DSLP_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Result code of every fallible call.
typedef enum DslpStatus {
  DSLP_STATUS_OK = 0,
  DSLP_STATUS_NULL_POINTER = 1,
  DSLP_STATUS_INVALID_ARGUMENT = 2,
  DSLP_STATUS_DIMENSION_MISMATCH = 3,
  DSLP_STATUS_IO = 4,
  DSLP_STATUS_FORMAT = 5,
  DSLP_STATUS_NO_SUPERVISION = 6,
  DSLP_STATUS_NO_VALID_PATH = 7,
  DSLP_STATUS_TEMPLATE_OUT_OF_BOUNDS = 8,
  DSLP_STATUS_DIVERGED = 9,
  DSLP_STATUS_INTERNAL = 10,
} DslpStatus;

// An SLP map with its DP field.
typedef struct DslpFields DslpFields;

typedef struct DslpGraph DslpGraph;

typedef struct DslpPredictor DslpPredictor;

// A generated world: predictor input, observations and ground truth.
typedef struct DslpWorld DslpWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until
// the next call into the library from the same thread.
const char *dslp_last_error(void);

// Library version as a static string.
const char *dslp_version(void);

// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void dslp_string_free(char *s);

// Generates a world of `side x side` cells. `template` is one of
// `straight`, `curve`, `t-intersection`, `fourway`, `fork`, `merge`.
//
// # Safety
// `template` must be a NUL-terminated string and `out` a valid pointer.
enum DslpStatus dslp_world_generate(const char *template_,
                                    uint32_t side,
                                    double lane_width,
                                    double rho,
                                    uint64_t seed,
                                    struct DslpWorld **out);

// # Safety
// `world` must be NULL or a handle from [`dslp_world_generate`], not yet freed.
void dslp_world_free(struct DslpWorld *world);

// # Safety
// All pointers must be valid.
enum DslpStatus dslp_world_dims(const struct DslpWorld *world, uint32_t *width, uint32_t *height);

// Information-balance ratio of the world's observations.
//
// # Safety
// All pointers must be valid.
enum DslpStatus dslp_world_alpha_ib(const struct DslpWorld *world, double *out);

// Ground-truth fields of a world (the oracle prediction).
//
// # Safety
// All pointers must be valid.
enum DslpStatus dslp_world_truth(const struct DslpWorld *world, struct DslpFields **out);

// Balanced SLP loss over `n` cells given as `width * height` row-major
// arrays. A negative `alpha` selects the information-balance ratio.
//
// # Safety
// `labels`, `region` and `y_hat` must each point to `width * height`
// readable doubles; `loss` and `alpha_ib` must be valid.
enum DslpStatus dslp_slp_loss(const double *labels,
                              const double *region,
                              const double *y_hat,
                              uint32_t width,
                              uint32_t height,
                              double alpha,
                              double *loss,
                              double *alpha_ib);

// Discrete von Mises distribution over `bins` equal bins.
//
// # Safety
// `out` must point to `bins` writable doubles.
enum DslpStatus dslp_encode_von_mises(double mu, double kappa, size_t bins, double *out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DslpStatus dslp_predictor_load(const char *path, struct DslpPredictor **out);

// Untrained predictor with seeded random weights for a world's channel count.
//
// # Safety
// `out` must be a valid pointer.
enum DslpStatus dslp_predictor_init(uint32_t in_channels,
                                    uint32_t hidden,
                                    uint32_t kernel,
                                    uint64_t seed,
                                    struct DslpPredictor **out);

// # Safety
// `predictor` must be NULL or a live predictor handle.
void dslp_predictor_free(struct DslpPredictor *predictor);

// # Safety
// All pointers must be valid.
enum DslpStatus dslp_predictor_forward(const struct DslpPredictor *predictor,
                                       const struct DslpWorld *world,
                                       struct DslpFields **out);

// # Safety
// `fields` must be NULL or a live fields handle.
void dslp_fields_free(struct DslpFields *fields);

// Copies the SLP map (row-major, `j` outer) into `out`.
//
// # Safety
// `fields` must be valid and `out` must point to `len` writable doubles.
enum DslpStatus dslp_fields_slp(const struct DslpFields *fields, double *out, size_t len);

// Fits a lane graph with the default configuration for `lane_width`.
//
// # Safety
// All pointers must be valid.
enum DslpStatus dslp_graph_fit(const struct DslpFields *fields,
                               double lane_width,
                               uint64_t seed,
                               struct DslpGraph **out);

// # Safety
// `graph` must be NULL or a live graph handle.
void dslp_graph_free(struct DslpGraph *graph);

// # Safety
// All pointers must be valid.
enum DslpStatus dslp_graph_counts(const struct DslpGraph *graph, size_t *nodes, size_t *edges);

// Graph as JSON; release with [`dslp_string_free`].
//
// # Safety
// All pointers must be valid.
enum DslpStatus dslp_graph_to_json(const struct DslpGraph *graph, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSLP_H */
