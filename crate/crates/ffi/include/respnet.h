#ifndef RESPNET_H
#define RESPNET_H

#include <stddef.h>
#include <stdint.h>

/*
 Front-end codes accepted by [`respnet_frontend_new`].
 */
#define RESPNET_FRONTEND_SCAL_MORSE 0

#define RESPNET_FRONTEND_SCAL_AMOR 1

#define RESPNET_FRONTEND_GAMMA 2

typedef enum RespnetStatus {
  RESPNET_STATUS_OK = 0,
  RESPNET_STATUS_NULL_ARGUMENT = 1,
  RESPNET_STATUS_INVALID_ARGUMENT = 2,
  RESPNET_STATUS_IO = 3,
  RESPNET_STATUS_FORMAT = 4,
  RESPNET_STATUS_SHAPE = 5,
  RESPNET_STATUS_BUFFER_TOO_SMALL = 6,
  RESPNET_STATUS_INTERNAL = 7,
} RespnetStatus;

/*
 Front-end settings.
 */
typedef struct RespnetFrontEnd RespnetFrontEnd;

/*
 A trained classifier.
 */
typedef struct RespnetModel RespnetModel;

/*
 Standardized patches of one clip, `count x rows x cols`, row-major.
 */
typedef struct RespnetPatches RespnetPatches;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or NULL if none. The pointer
 stays valid until the next failing call on this thread.
 */
const char *respnet_last_error(void);

/*
 NUL-terminated library version; static storage.
 */
const char *respnet_version(void);

/*
 Loads a checkpoint file.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RespnetStatus respnet_model_load(const char *path, struct RespnetModel **out);

/*
 Releases a model; NULL is ignored.

 # Safety
 `model` must come from [`respnet_model_load`] and not be used afterwards.
 */
void respnet_model_free(struct RespnetModel *model);

/*
 Class count, or 0 for NULL.

 # Safety
 `model` must be NULL or a live handle.
 */
size_t respnet_model_num_classes(const struct RespnetModel *model);

/*
 Patch height and width the model expects.

 # Safety
 `model` must be a live handle; `rows` and `cols` writable.
 */
enum RespnetStatus respnet_model_input_shape(const struct RespnetModel *model,
                                             size_t *rows,
                                             size_t *cols);

/*
 Eval-mode class probabilities of `n_patches` patches laid out as
 `n_patches x rows x cols`. Writes `n_patches x C` values to `out`.

 # Safety
 `patches` must hold `n_patches * rows * cols` floats and `out` room for
 `out_len` doubles.
 */
enum RespnetStatus respnet_model_predict(const struct RespnetModel *model,
                                         const float *patches,
                                         size_t n_patches,
                                         double *out,
                                         size_t out_len);

/*
 Classifies one instance from its patches: probabilities are averaged
 over patches and the label is their argmax, ties to the lowest class.

 # Safety
 As [`respnet_model_predict`]; `out` holds `out_len >= C` doubles and
 `label` is writable.
 */
enum RespnetStatus respnet_model_classify(const struct RespnetModel *model,
                                          const float *patches,
                                          size_t n_patches,
                                          double *out,
                                          size_t out_len,
                                          size_t *label);

/*
 Creates a front-end with default settings for one of the
 `RESPNET_FRONTEND_*` codes.

 # Safety
 `out` must be writable.
 */
enum RespnetStatus respnet_frontend_new(uint32_t kind, struct RespnetFrontEnd **out);

/*
 Releases a front-end; NULL is ignored.

 # Safety
 `frontend` must come from [`respnet_frontend_new`].
 */
void respnet_frontend_free(struct RespnetFrontEnd *frontend);

/*
 Standardized patches of a mono clip. The clip should already be
 conditioned (resampled, filtered and normalized) for its task.

 # Safety
 `samples` must hold `len` floats and `out` be writable.
 */
enum RespnetStatus respnet_frontend_patches(const struct RespnetFrontEnd *frontend,
                                            const float *samples,
                                            size_t len,
                                            uint32_t sample_rate,
                                            struct RespnetPatches **out);

/*
 Number of patches, or 0 for NULL.

 # Safety
 `patches` must be NULL or a live handle.
 */
size_t respnet_patches_count(const struct RespnetPatches *patches);

/*
 Rows and columns of every patch.

 # Safety
 `patches` must be a live handle; `rows` and `cols` writable.
 */
enum RespnetStatus respnet_patches_shape(const struct RespnetPatches *patches,
                                         size_t *rows,
                                         size_t *cols);

/*
 Contiguous `count x rows x cols` values, owned by the handle.

 # Safety
 `patches` must be NULL or a live handle.
 */
const float *respnet_patches_data(const struct RespnetPatches *patches);

/*
 Releases patches; NULL is ignored.

 # Safety
 `patches` must come from [`respnet_frontend_patches`].
 */
void respnet_patches_free(struct RespnetPatches *patches);

/*
 Average and harmonic scores of a sensitivity and specificity in [0, 1].

 # Safety
 `as_score` and `hs_score` must be writable.
 */
enum RespnetStatus respnet_icbhi_scores(double sen,
                                        double spec,
                                        double *as_score,
                                        double *hs_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RESPNET_H */
