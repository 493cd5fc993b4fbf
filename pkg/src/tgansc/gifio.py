"""Minimal GIF89a writer.

Writes one image block per input frame (no frame deduplication, so an
l-frame video always yields an l-frame file) with standard LZW compression.
Grayscale videos use a fixed 256-level gray global palette, which makes the
encoding lossless at 8 bits; RGB frames carry per-frame local palettes.
Decoding is delegated to Pillow elsewhere.
"""

import struct

GRAY_PALETTE = bytes(v for i in range(256) for v in (i, i, i))


class _BitPacker:
    """LSB-first bit stream chunked into <=255-byte GIF sub-blocks."""

    def __init__(self):
        self.bytes = bytearray()
        self.acc = 0
        self.nbits = 0

    def put(self, code, width):
        self.acc |= code << self.nbits
        self.nbits += width
        while self.nbits >= 8:
            self.bytes.append(self.acc & 0xFF)
            self.acc >>= 8
            self.nbits -= 8

    def finish(self):
        if self.nbits:
            self.bytes.append(self.acc & 0xFF)
        out = bytearray()
        data = bytes(self.bytes)
        for i in range(0, len(data), 255):
            chunk = data[i:i + 255]
            out.append(len(chunk))
            out.extend(chunk)
        out.append(0)
        return bytes(out)


def _lzw_encode(indices, min_code_size=8):
    clear = 1 << min_code_size
    eoi = clear + 1
    packer = _BitPacker()

    def fresh_table():
        return {bytes([i]): i for i in range(clear)}

    code_size = min_code_size + 1
    table = fresh_table()
    next_code = eoi + 1
    packer.put(clear, code_size)
    w = b""
    for value in indices:
        k = bytes([value])
        wk = w + k
        if wk in table:
            w = wk
            continue
        packer.put(table[w], code_size)
        if next_code < 4096:
            table[wk] = next_code
            if next_code == (1 << code_size) and code_size < 12:
                code_size += 1
            next_code += 1
        else:
            packer.put(clear, code_size)
            table = fresh_table()
            code_size = min_code_size + 1
            next_code = eoi + 1
        w = k
    if w:
        packer.put(table[w], code_size)
    packer.put(eoi, code_size)
    return packer.finish()


def write_gif(path, frames, palettes=None, duration_cs=10, loop=0):
    """Write index frames (list of (h, w) uint8 arrays) as an animated GIF.

    ``palettes`` is a single 768-byte palette shared globally, or a list with
    one palette per frame (stored as local color tables). Defaults to gray.
    """
    if not frames:
        raise ValueError("need at least one frame")
    h, w = frames[0].shape
    per_frame = isinstance(palettes, (list, tuple))
    global_palette = GRAY_PALETTE if palettes is None else (None if per_frame else palettes)

    blob = bytearray()
    blob.extend(b"GIF89a")
    packed = 0xF7 if global_palette else 0x70  # 256-entry table flag + 8-bit color res
    blob.extend(struct.pack("<HHBBB", w, h, packed, 0, 0))
    if global_palette:
        blob.extend(global_palette)
    # NETSCAPE looping extension
    blob.extend(b"\x21\xff\x0bNETSCAPE2.0\x03\x01" + struct.pack("<H", loop) + b"\x00")
    for t, frame in enumerate(frames):
        if frame.shape != (h, w):
            raise ValueError(f"frame {t} shape {frame.shape} differs from {(h, w)}")
        blob.extend(b"\x21\xf9\x04\x00" + struct.pack("<H", duration_cs) + b"\x00\x00")
        local = palettes[t] if per_frame else None
        img_packed = 0x87 if local else 0x00  # local table, 256 entries
        blob.extend(b"\x2c" + struct.pack("<HHHHB", 0, 0, w, h, img_packed))
        if local:
            blob.extend(local)
        blob.append(8)  # LZW minimum code size
        blob.extend(_lzw_encode(frame.reshape(-1).tobytes()))
    blob.append(0x3B)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))
