/* @ts-self-types="./drivestack_web.d.ts" */

/**
 * A 20 m × 12 m map with the vehicle near the bottom edge facing up.
 */
export class LatticeDemo {
    __destroy_into_raw() {
        const ptr = this.__wbg_ptr;
        this.__wbg_ptr = 0;
        LatticeDemoFinalization.unregister(this);
        return ptr;
    }
    free() {
        const ptr = this.__destroy_into_raw();
        wasm.__wbg_latticedemo_free(ptr, 0);
    }
    /**
     * @returns {number}
     */
    anchor_col() {
        const ret = wasm.latticedemo_anchor_col(this.__wbg_ptr);
        return ret >>> 0;
    }
    /**
     * @returns {number}
     */
    anchor_row() {
        const ret = wasm.latticedemo_anchor_row(this.__wbg_ptr);
        return ret >>> 0;
    }
    clear() {
        wasm.latticedemo_clear(this.__wbg_ptr);
    }
    /**
     * @returns {number}
     */
    cols() {
        const ret = wasm.latticedemo_cols(this.__wbg_ptr);
        return ret >>> 0;
    }
    /**
     * @param {number} row
     * @param {number} col
     * @returns {boolean}
     */
    is_blocked(row, col) {
        const ret = wasm.latticedemo_is_blocked(this.__wbg_ptr, row, col);
        return ret !== 0;
    }
    /**
     * Lattice cost of the last plan, or `∞` when it failed.
     * @returns {number}
     */
    last_cost() {
        const ret = wasm.latticedemo_last_cost(this.__wbg_ptr);
        return ret;
    }
    /**
     * The last plan stopped short of the goal because the search budget ran out.
     * @returns {boolean}
     */
    last_partial() {
        const ret = wasm.latticedemo_last_partial(this.__wbg_ptr);
        return ret !== 0;
    }
    constructor() {
        const ret = wasm.latticedemo_new();
        this.__wbg_ptr = ret;
        LatticeDemoFinalization.register(this, this.__wbg_ptr, this);
        return this;
    }
    /**
     * Plans from the vehicle to the goal cell at `heading_deg` (0 = up, positive = left).
     * Returns the path as flattened `(row, col)` pairs in fractional cell units, or an
     * empty array when no path exists.
     * @param {number} goal_row
     * @param {number} goal_col
     * @param {number} heading_deg
     * @returns {Float64Array}
     */
    plan(goal_row, goal_col, heading_deg) {
        const ret = wasm.latticedemo_plan(this.__wbg_ptr, goal_row, goal_col, heading_deg);
        var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
        wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
        return v1;
    }
    /**
     * @returns {number}
     */
    rows() {
        const ret = wasm.latticedemo_rows(this.__wbg_ptr);
        return ret >>> 0;
    }
    /**
     * Flips a cell between free and obstacle; returns the new state.
     * @param {number} row
     * @param {number} col
     * @returns {boolean}
     */
    toggle(row, col) {
        const ret = wasm.latticedemo_toggle(this.__wbg_ptr, row, col);
        return ret !== 0;
    }
}
if (Symbol.dispose) LatticeDemo.prototype[Symbol.dispose] = LatticeDemo.prototype.free;

/**
 * Posterior occupancy of one cell after each observation in turn, starting from 0.5.
 * Observations equal to 0.5 carry no evidence.
 * @param {Float64Array} observations
 * @returns {Float64Array}
 */
export function fuse_sequence(observations) {
    const ptr0 = passArrayF64ToWasm0(observations, wasm.__wbindgen_malloc);
    const len0 = WASM_VECTOR_LEN;
    const ret = wasm.fuse_sequence(ptr0, len0);
    var v2 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
    wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
    return v2;
}

/**
 * `samples` evenly spaced `(distance, speed)` pairs over `[0, max_dist]`, flattened.
 * @param {number} v_max
 * @param {number} c
 * @param {number} d
 * @param {number} max_dist
 * @param {number} samples
 * @returns {Float64Array}
 */
export function safe_speed_curve(v_max, c, d, max_dist, samples) {
    const ret = wasm.safe_speed_curve(v_max, c, d, max_dist, samples);
    var v1 = getArrayF64FromWasm0(ret[0], ret[1]).slice();
    wasm.__wbindgen_free(ret[0], ret[1] * 8, 8);
    return v1;
}

/**
 * @param {number} v_max
 * @param {number} c
 * @param {number} d
 * @returns {number}
 */
export function standstill_distance(v_max, c, d) {
    const ret = wasm.standstill_distance(v_max, c, d);
    return ret;
}
function __wbg_get_imports() {
    const import0 = {
        __proto__: null,
        __wbg___wbindgen_throw_41e9ee4f547fc59a: function(arg0, arg1) {
            throw new Error(getStringFromWasm0(arg0, arg1));
        },
        __wbindgen_init_externref_table: function() {
            const table = wasm.__wbindgen_externrefs;
            const offset = table.grow(4);
            table.set(0, undefined);
            table.set(offset + 0, undefined);
            table.set(offset + 1, null);
            table.set(offset + 2, true);
            table.set(offset + 3, false);
        },
    };
    return {
        __proto__: null,
        "./drivestack_web_bg.js": import0,
    };
}

const LatticeDemoFinalization = (typeof FinalizationRegistry === 'undefined')
    ? { register: () => {}, unregister: () => {} }
    : new FinalizationRegistry(ptr => wasm.__wbg_latticedemo_free(ptr, 1));

function getArrayF64FromWasm0(ptr, len) {
    ptr = ptr >>> 0;
    return getFloat64ArrayMemory0().subarray(ptr / 8, ptr / 8 + len);
}

let cachedFloat64ArrayMemory0 = null;
function getFloat64ArrayMemory0() {
    if (cachedFloat64ArrayMemory0 === null || cachedFloat64ArrayMemory0.byteLength === 0) {
        cachedFloat64ArrayMemory0 = new Float64Array(wasm.memory.buffer);
    }
    return cachedFloat64ArrayMemory0;
}

function getStringFromWasm0(ptr, len) {
    return decodeText(ptr >>> 0, len);
}

let cachedUint8ArrayMemory0 = null;
function getUint8ArrayMemory0() {
    if (cachedUint8ArrayMemory0 === null || cachedUint8ArrayMemory0.byteLength === 0) {
        cachedUint8ArrayMemory0 = new Uint8Array(wasm.memory.buffer);
    }
    return cachedUint8ArrayMemory0;
}

function passArrayF64ToWasm0(arg, malloc) {
    const ptr = malloc(arg.length * 8, 8) >>> 0;
    getFloat64ArrayMemory0().set(arg, ptr / 8);
    WASM_VECTOR_LEN = arg.length;
    return ptr;
}

let cachedTextDecoder = new TextDecoder('utf-8', { ignoreBOM: true, fatal: true });
cachedTextDecoder.decode();
const MAX_SAFARI_DECODE_BYTES = 2146435072;
let numBytesDecoded = 0;
function decodeText(ptr, len) {
    numBytesDecoded += len;
    if (numBytesDecoded >= MAX_SAFARI_DECODE_BYTES) {
        cachedTextDecoder = new TextDecoder('utf-8', { ignoreBOM: true, fatal: true });
        cachedTextDecoder.decode();
        numBytesDecoded = len;
    }
    return cachedTextDecoder.decode(getUint8ArrayMemory0().subarray(ptr, ptr + len));
}

let WASM_VECTOR_LEN = 0;

let wasmModule, wasmInstance, wasm;
function __wbg_finalize_init(instance, module) {
    wasmInstance = instance;
    wasm = instance.exports;
    wasmModule = module;
    cachedFloat64ArrayMemory0 = null;
    cachedUint8ArrayMemory0 = null;
    wasm.__wbindgen_start();
    return wasm;
}

async function __wbg_load(module, imports) {
    if (typeof Response === 'function' && module instanceof Response) {
        if (!module.ok) {
            throw new Error(`failed to fetch Wasm: ${module.status} ${module.statusText} fetching '${module.url}'`);
        }

        if (typeof WebAssembly.instantiateStreaming === 'function') {
            try {
                return await WebAssembly.instantiateStreaming(module, imports);
            } catch (e) {
                const validResponse = expectedResponseType(module.type);

                if (validResponse && module.headers.get('Content-Type') !== 'application/wasm') {
                    console.warn("`WebAssembly.instantiateStreaming` failed because your server does not serve Wasm with `application/wasm` MIME type. Falling back to `WebAssembly.instantiate` which is slower. Original error:\n", e);

                } else { throw e; }
            }
        }

        const bytes = await module.arrayBuffer();
        return await WebAssembly.instantiate(bytes, imports);
    } else {
        const instance = await WebAssembly.instantiate(module, imports);

        if (instance instanceof WebAssembly.Instance) {
            return { instance, module };
        } else {
            return instance;
        }
    }

    function expectedResponseType(type) {
        switch (type) {
            case 'basic': case 'cors': case 'default': return true;
        }
        return false;
    }
}

function initSync(module) {
    if (wasm !== undefined) return wasm;


    if (module !== undefined) {
        if (Object.getPrototypeOf(module) === Object.prototype) {
            ({module} = module)
        } else {
            console.warn('using deprecated parameters for `initSync()`; pass a single object instead')
        }
    }

    const imports = __wbg_get_imports();
    if (!(module instanceof WebAssembly.Module)) {
        module = new WebAssembly.Module(module);
    }
    const instance = new WebAssembly.Instance(module, imports);
    return __wbg_finalize_init(instance, module);
}

async function __wbg_init(module_or_path) {
    if (wasm !== undefined) return wasm;


    if (module_or_path !== undefined) {
        if (Object.getPrototypeOf(module_or_path) === Object.prototype) {
            ({module_or_path} = module_or_path)
        } else {
            console.warn('using deprecated parameters for the initialization function; pass a single object instead')
        }
    }

    if (module_or_path === undefined) {
        module_or_path = new URL('drivestack_web_bg.wasm', import.meta.url);
    }
    const imports = __wbg_get_imports();

    if (typeof module_or_path === 'string' || (typeof Request === 'function' && module_or_path instanceof Request) || (typeof URL === 'function' && module_or_path instanceof URL)) {
        module_or_path = fetch(module_or_path);
    }

    const { instance, module } = await __wbg_load(await module_or_path, imports);

    return __wbg_finalize_init(instance, module);
}

export { initSync, __wbg_init as default };
