/* CRC-32C (Castagnoli polynomial, reflected), slicing-by-8.
 *
 * Used to integrity-check every persisted and transmitted record payload.
 * A pure-Python fallback with the same semantics lives in checksum.py.
 */
#define PY_SSIZE_T_CLEAN
#include <Python.h>
#include <stdint.h>

#define CRC32C_POLY 0x82F63B78u

static uint32_t table[8][256];

static void
build_table(void)
{
    int n, k;
    for (n = 0; n < 256; n++) {
        uint32_t c = (uint32_t)n;
        for (k = 0; k < 8; k++)
            c = (c & 1) ? (c >> 1) ^ CRC32C_POLY : (c >> 1);
        table[0][n] = c;
    }
    for (n = 0; n < 256; n++) {
        uint32_t c = table[0][n];
        for (k = 1; k < 8; k++) {
            c = table[0][c & 0xFF] ^ (c >> 8);
            table[k][n] = c;
        }
    }
}

static uint32_t
crc32c_update(uint32_t crc, const uint8_t *buf, Py_ssize_t len)
{
    crc = ~crc;
    while (len >= 8) {
        crc ^= (uint32_t)buf[0] | ((uint32_t)buf[1] << 8) |
               ((uint32_t)buf[2] << 16) | ((uint32_t)buf[3] << 24);
        crc = table[7][crc & 0xFF] ^ table[6][(crc >> 8) & 0xFF] ^
              table[5][(crc >> 16) & 0xFF] ^ table[4][crc >> 24] ^
              table[3][buf[4]] ^ table[2][buf[5]] ^
              table[1][buf[6]] ^ table[0][buf[7]];
        buf += 8;
        len -= 8;
    }
    while (len-- > 0)
        crc = table[0][(crc ^ *buf++) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

static PyObject *
py_crc32c(PyObject *self, PyObject *args)
{
    Py_buffer view;
    unsigned int crc = 0;
    uint32_t out;

    if (!PyArg_ParseTuple(args, "y*|I:crc32c", &view, &crc))
        return NULL;
    if (view.len > 65536) {
        Py_BEGIN_ALLOW_THREADS
        out = crc32c_update((uint32_t)crc, (const uint8_t *)view.buf, view.len);
        Py_END_ALLOW_THREADS
    }
    else {
        out = crc32c_update((uint32_t)crc, (const uint8_t *)view.buf, view.len);
    }
    PyBuffer_Release(&view);
    return PyLong_FromUnsignedLong(out);
}

static PyMethodDef methods[] = {
    {"crc32c", py_crc32c, METH_VARARGS,
     "crc32c(data, crc=0) -> int\n\nCRC-32C checksum of a bytes-like object."},
    {NULL, NULL, 0, NULL},
};

static struct PyModuleDef moduledef = {
    PyModuleDef_HEAD_INIT, "_crc32c", NULL, -1, methods,
};

PyMODINIT_FUNC
PyInit__crc32c(void)
{
    build_table();
    return PyModule_Create(&moduledef);
}
