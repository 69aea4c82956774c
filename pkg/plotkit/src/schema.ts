import { readFileSync } from 'fs'

/** One step ledger as stored in a dump (null on the initial frame). */
export interface StepReport {
  acc_cost_sq: number
  stress_trace: number
  kinetic_before: number
  kinetic_after: number
  internal_before: number
  internal_after: number
  dissipation: number
  momentum_after: number[]
  el_residual: number
  solver_iterations: number
}

export interface Frame {
  t: number
  particles: {
    m: number[]
    x: number[][]
    u: number[][]
    S: number[]
  }
  energies: { kinetic: number; internal: number; total: number }
  report: StepReport | null
}

export class SchemaError extends Error {}

function assertNumberArray(a: unknown, what: string): number[] {
  if (!Array.isArray(a) || a.some((v) => typeof v !== 'number' || !isFinite(v))) {
    throw new SchemaError(`${what} must be an array of finite numbers`)
  }
  return a as number[]
}

function assertVectorArray(a: unknown, what: string): number[][] {
  if (!Array.isArray(a)) throw new SchemaError(`${what} must be an array`)
  for (const row of a) assertNumberArray(row, `${what} entry`)
  return a as number[][]
}

export function parseFrame(line: string, index: number): Frame {
  let data: any
  try {
    data = JSON.parse(line)
  } catch (e) {
    throw new SchemaError(`frame ${index}: not valid JSON (${e})`)
  }
  if (typeof data.t !== 'number') throw new SchemaError(`frame ${index}: missing t`)
  const p = data.particles
  if (!p) throw new SchemaError(`frame ${index}: missing particles`)
  const m = assertNumberArray(p.m, `frame ${index}: particles.m`)
  const x = assertVectorArray(p.x, `frame ${index}: particles.x`)
  const u = assertVectorArray(p.u, `frame ${index}: particles.u`)
  const S = assertNumberArray(p.S, `frame ${index}: particles.S`)
  if (x.length !== m.length || u.length !== m.length || S.length !== m.length) {
    throw new SchemaError(`frame ${index}: particle arrays disagree in length`)
  }
  const e = data.energies
  if (!e || typeof e.kinetic !== 'number' || typeof e.internal !== 'number' ||
      typeof e.total !== 'number') {
    throw new SchemaError(`frame ${index}: malformed energies`)
  }
  if (data.report !== null && typeof data.report !== 'object') {
    throw new SchemaError(`frame ${index}: malformed report`)
  }
  return data as Frame
}

export function readFrames(path: string): Frame[] {
  const text = readFileSync(path, 'utf8')
  const lines = text.split('\n').filter((l) => l.trim().length > 0)
  if (lines.length === 0) throw new SchemaError(`no frames in ${path}`)
  const frames = lines.map((l, i) => parseFrame(l, i))
  for (let i = 1; i < frames.length; i++) {
    if (frames[i].t <= frames[i - 1].t) {
      throw new SchemaError(`frame ${i}: times not increasing`)
    }
  }
  return frames
}

export interface ClusterRow {
  n: number
  tau: number
  pooled_position: number
  analytic: number
  abs_error: number
}

/** Parse the cluster.csv table written by `gasflow report --cluster-scan`. */
export function readClusterTable(path: string): ClusterRow[] {
  const text = readFileSync(path, 'utf8')
  const lines = text.split('\n').filter((l) => l.trim().length > 0)
  if (lines.length < 2) throw new SchemaError(`no rows in ${path}`)
  const header = lines[0].split(',').map((h) => h.trim())
  const need = ['n', 'tau', 'pooled_position', 'analytic', 'abs_error']
  for (const key of need) {
    if (!header.includes(key)) throw new SchemaError(`${path}: missing column ${key}`)
  }
  const idx = (k: string) => header.indexOf(k)
  return lines.slice(1).map((line, i) => {
    const cells = line.split(',')
    const row: ClusterRow = {
      n: Number(cells[idx('n')]),
      tau: Number(cells[idx('tau')]),
      pooled_position: Number(cells[idx('pooled_position')]),
      analytic: Number(cells[idx('analytic')]),
      abs_error: Number(cells[idx('abs_error')]),
    }
    if (!isFinite(row.n) || !isFinite(row.pooled_position)) {
      throw new SchemaError(`${path}: bad row ${i + 1}`)
    }
    return row
  })
}
