/**
 * Minimal PNG codec, enough to move masks and completions around without a
 * canvas: encodes 8-bit grayscale with stored (uncompressed) deflate blocks,
 * decodes 8-bit grayscale/RGB/RGBA with all five standard row filters. An
 * inflate function must be injected to decode compressed files (node:zlib in
 * tests, DecompressionStream or canvas elsewhere); self-produced files decode
 * without one.
 */

export type Inflate = (data: Uint8Array) => Uint8Array;

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (const b of bytes) c = CRC_TABLE[(c ^ b) & 0xff] ^ (c >>> 8);
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (const v of bytes) {
    a = (a + v) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32(value: number): number[] {
  return [(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff];
}

function chunk(type: string, payload: Uint8Array): Uint8Array {
  const body = new Uint8Array(4 + payload.length);
  body.set(type.split("").map((c) => c.charCodeAt(0)));
  body.set(payload, 4);
  return new Uint8Array([...u32(payload.length), ...body, ...u32(crc32(body))]);
}

/** zlib stream with stored deflate blocks: valid, just not compressed. */
function storedZlib(raw: Uint8Array): Uint8Array {
  const parts: number[] = [0x78, 0x01];
  const blockSize = 0xffff;
  for (let offset = 0; offset < raw.length || offset === 0; offset += blockSize) {
    const block = raw.subarray(offset, Math.min(offset + blockSize, raw.length));
    const final = offset + blockSize >= raw.length ? 1 : 0;
    const len = block.length;
    parts.push(final, len & 0xff, len >>> 8, ~len & 0xff, (~len >>> 8) & 0xff);
    parts.push(...block);
    if (raw.length === 0) break;
  }
  const out = new Uint8Array(parts.length + 4);
  out.set(parts);
  out.set(u32(adler32(raw)), parts.length);
  return out;
}

function inflateStored(data: Uint8Array): Uint8Array {
  if (data[0] !== 0x78) throw new Error("not a zlib stream");
  const out: number[] = [];
  let pos = 2;
  for (;;) {
    const header = data[pos];
    if ((header & 0x06) !== 0) {
      throw new Error("compressed deflate blocks need an injected inflate");
    }
    const len = data[pos + 1] | (data[pos + 2] << 8);
    out.push(...data.subarray(pos + 5, pos + 5 + len));
    pos += 5 + len;
    if (header & 1) break;
  }
  return new Uint8Array(out);
}

/** Encode a grayscale image; values are 0..255, row-major. */
export function encodeGrayPng(pixels: Uint8Array, width: number, height: number): Uint8Array {
  if (pixels.length !== width * height) {
    throw new Error(`pixel count ${pixels.length} != ${width}x${height}`);
  }
  const ihdr = new Uint8Array([...u32(width), ...u32(height), 8, 0, 0, 0, 0]);
  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0; // filter: none
    raw.set(pixels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  return concat([
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("IDAT", storedZlib(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let at = 0;
  for (const p of parts) {
    out.set(p, at);
    at += p.length;
  }
  return out;
}

export interface DecodedPng {
  width: number;
  height: number;
  channels: number; // 1 gray, 3 rgb, 4 rgba
  pixels: Uint8Array; // interleaved, row-major, filter removed
}

export function decodePng(bytes: Uint8Array, inflate?: Inflate): DecodedPng {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG file");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let pos = 8;
  let width = 0;
  let height = 0;
  let channels = 0;
  const idat: Uint8Array[] = [];
  while (pos < bytes.length) {
    const length = view.getUint32(pos);
    const type = String.fromCharCode(...bytes.subarray(pos + 4, pos + 8));
    const payload = bytes.subarray(pos + 8, pos + 8 + length);
    if (type === "IHDR") {
      width = view.getUint32(pos + 8);
      height = view.getUint32(pos + 12);
      const bitDepth = bytes[pos + 16];
      const colorType = bytes[pos + 17];
      if (bitDepth !== 8) throw new Error(`unsupported bit depth ${bitDepth}`);
      if (bytes[pos + 20] !== 0) throw new Error("interlaced PNGs unsupported");
      const byType: Record<number, number> = { 0: 1, 2: 3, 4: 2, 6: 4 };
      channels = byType[colorType];
      if (!channels) throw new Error(`unsupported color type ${colorType}`);
    } else if (type === "IDAT") {
      idat.push(payload);
    } else if (type === "IEND") {
      break;
    }
    pos += 12 + length;
  }
  const stream = concat(idat);
  const raw = inflate ? inflate(stream) : inflateStored(stream);
  return { width, height, channels, pixels: unfilter(raw, width, height, channels) };
}

function unfilter(raw: Uint8Array, width: number, height: number, channels: number): Uint8Array {
  const stride = width * channels;
  const out = new Uint8Array(stride * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null;
    const cur = out.subarray(y * stride, (y + 1) * stride);
    for (let x = 0; x < stride; x++) {
      const a = x >= channels ? cur[x - channels] : 0;
      const b = prev ? prev[x] : 0;
      const c = prev && x >= channels ? prev[x - channels] : 0;
      let v = row[x];
      switch (filter) {
        case 0:
          break;
        case 1:
          v += a;
          break;
        case 2:
          v += b;
          break;
        case 3:
          v += (a + b) >> 1;
          break;
        case 4: {
          const p = a + b - c;
          const pa = Math.abs(p - a);
          const pb = Math.abs(p - b);
          const pc = Math.abs(p - c);
          v += pa <= pb && pa <= pc ? a : pb <= pc ? b : c;
          break;
        }
        default:
          throw new Error(`unknown row filter ${filter}`);
      }
      cur[x] = v & 0xff;
    }
  }
  return out;
}

export function bytesToBase64(bytes: Uint8Array): string {
  let s = "";
  for (const b of bytes) s += String.fromCharCode(b);
  return btoa(s); // global in browsers and node >= 16
}

export function base64ToBytes(b64: string): Uint8Array {
  const s = atob(b64);
  const out = new Uint8Array(s.length);
  for (let i = 0; i < s.length; i++) out[i] = s.charCodeAt(i);
  return out;
}

/** Mask raster (1 = valid) to the wire format the service expects. */
export function maskToPngBase64(raster: Uint8Array, width: number, height: number): string {
  const gray = new Uint8Array(raster.length);
  for (let i = 0; i < raster.length; i++) gray[i] = raster[i] ? 255 : 0;
  return bytesToBase64(encodeGrayPng(gray, width, height));
}

/** Wire-format mask back to a 0/1 raster (>= 128 counts as valid). */
export function pngBase64ToMask(b64: string, inflate?: Inflate): {
  raster: Uint8Array;
  width: number;
  height: number;
} {
  const decoded = decodePng(base64ToBytes(b64), inflate);
  if (decoded.channels !== 1) {
    throw new Error(`mask PNG must be single-channel, got ${decoded.channels}`);
  }
  const raster = new Uint8Array(decoded.pixels.length);
  for (let i = 0; i < raster.length; i++) raster[i] = decoded.pixels[i] >= 128 ? 1 : 0;
  return { raster, width: decoded.width, height: decoded.height };
}
