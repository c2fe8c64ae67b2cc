/**
 * Minimal NPY v1.0 codec for the two dtypes the interchange format uses:
 * little-endian float32 ('<f4') and uint8 ('|u1'), C-order only.
 *
 * The writer reproduces numpy's own byte layout (header text, 64-byte
 * alignment, trailing newline) so files are byte-identical to what
 * np.save would emit, which keeps re-export comparisons trivial.
 */

const MAGIC = Buffer.from('\x93NUMPY', 'latin1');

export type NpyDtype = 'float32' | 'uint8';

export type NpyArray = {
  dtype: NpyDtype;
  shape: number[];
  /** flat C-order values; Float32Array or Uint8Array matching dtype */
  data: Float32Array | Uint8Array;
};

function descrOf(dtype: NpyDtype): string {
  return dtype === 'float32' ? '<f4' : '|u1';
}

function shapeRepr(shape: number[]): string {
  // numpy prints 1-tuples as "(n,)" and others comma-space separated
  if (shape.length === 1) return `(${shape[0]},)`;
  return `(${shape.join(', ')})`;
}

export function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function encodeNpy(arr: NpyArray): Buffer {
  if (arr.shape.some(d => !Number.isInteger(d) || d < 0)) {
    throw new Error(`bad shape [${arr.shape}]`);
  }
  if (arr.data.length !== elementCount(arr.shape)) {
    throw new Error(
      `shape [${arr.shape}] wants ${elementCount(arr.shape)} elements, got ${arr.data.length}`,
    );
  }
  const header =
    `{'descr': '${descrOf(arr.dtype)}', ` +
    `'fortran_order': False, ` +
    `'shape': ${shapeRepr(arr.shape)}, }`;
  // magic(6) + version(2) + hlen(2) + header padded to a 64-byte boundary
  const unpadded = 10 + header.length + 1;
  const padded = Math.ceil(unpadded / 64) * 64;
  const headerText = header + ' '.repeat(padded - unpadded) + '\n';

  const head = Buffer.alloc(10 + headerText.length);
  MAGIC.copy(head, 0);
  head[6] = 1; // format version 1.0
  head[7] = 0;
  head.writeUInt16LE(headerText.length, 8);
  head.write(headerText, 10, 'latin1');

  const body = Buffer.from(arr.data.buffer, arr.data.byteOffset, arr.data.byteLength);
  return Buffer.concat([head, body]);
}

export function decodeNpy(buf: Buffer): NpyArray {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new Error('not an NPY file');
  }
  if (buf[6] !== 1 || buf[7] !== 0) {
    throw new Error(`unsupported NPY version ${buf[6]}.${buf[7]}`);
  }
  const hlen = buf.readUInt16LE(8);
  const header = buf.subarray(10, 10 + hlen).toString('latin1');

  const descr = /'descr':\s*'([^']+)'/.exec(header)?.[1];
  const fortran = /'fortran_order':\s*(True|False)/.exec(header)?.[1];
  const shapeText = /'shape':\s*\(([^)]*)\)/.exec(header);
  if (!descr || !fortran || !shapeText) throw new Error(`bad NPY header: ${header}`);
  if (fortran === 'True') throw new Error('fortran-order NPY not supported');

  const shape = shapeText[1]
    .split(',')
    .map(s => s.trim())
    .filter(s => s.length > 0)
    .map(Number);
  if (shape.some(d => !Number.isInteger(d) || d < 0)) {
    throw new Error(`bad NPY shape (${shapeText[1]})`);
  }

  const count = elementCount(shape);
  const body = buf.subarray(10 + hlen);
  if (descr === '<f4') {
    if (body.length !== count * 4) throw new Error('NPY payload size mismatch');
    // copy out of the Buffer pool so byteOffset alignment never bites
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++) data[i] = body.readFloatLE(i * 4);
    return { dtype: 'float32', shape, data };
  }
  if (descr === '|u1') {
    if (body.length !== count) throw new Error('NPY payload size mismatch');
    return { dtype: 'uint8', shape, data: new Uint8Array(body) };
  }
  throw new Error(`unsupported NPY dtype ${descr}`);
}
