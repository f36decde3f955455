#ifndef MPWIDE_H
#define MPWIDE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define MPW_OK 0
#define MPW_ERR_NOT_INITIALIZED -1
#define MPW_ERR_INVALID_ARGUMENT -2
#define MPW_ERR_NO_SUCH_PATH -3
#define MPW_ERR_PATH_FAILED -4
#define MPW_ERR_BUSY -5
#define MPW_ERR_TIMEOUT -6
#define MPW_ERR_CONNECT -7
#define MPW_ERR_TRANSPORT -8
#define MPW_ERR_PROTOCOL -9
#define MPW_ERR_OVERSIZE -10
#define MPW_ERR_HANDLE -11
#define MPW_ERR_OTHER -99

int mpw_init(void);
int mpw_finalize(void);

/* Returns a path id (> 0) or a status (< 0). */
int64_t mpw_create_path(const char *host, uint16_t port, int streams, int server, int autotune);
int mpw_destroy_path(int64_t path);

int mpw_send(int64_t path, const uint8_t *buf, size_t len);
int mpw_recv(int64_t path, uint8_t *buf, size_t len);
int mpw_send_recv(int64_t path, const uint8_t *out, size_t out_len, uint8_t *in, size_t in_len);
/* *in is allocated by the library; release it with mpw_free. */
int mpw_dsend_recv(int64_t path, const uint8_t *out, size_t out_len, uint8_t **in, size_t *in_len);
void mpw_free(uint8_t *buf, size_t len);
int mpw_barrier(int64_t path);
int mpw_cycle(int64_t recv_path, int64_t send_path, const uint8_t *out, size_t out_len,
              uint8_t *in, size_t in_len);

/* Returns a handle id (> 0) or a status (< 0). */
int64_t mpw_isend_recv(int64_t path, const uint8_t *out, size_t out_len, size_t in_len);
int mpw_has_finished(int64_t handle);
int mpw_wait(int64_t handle, uint8_t *in, size_t in_len);

int mpw_set_chunk_size(int64_t path, size_t bytes);
int mpw_set_pacing_rate(int64_t path, uint64_t bytes_per_second);
int mpw_set_window(int64_t path, size_t bytes);
int mpw_set_autotune(int64_t path, int on);

size_t mpw_last_error(char *buf, size_t len);

#ifdef __cplusplus
}
#endif

#endif
