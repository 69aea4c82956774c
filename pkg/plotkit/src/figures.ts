import { Frame, ClusterRow, SchemaError } from './schema'
import { SvgCanvas, extent, linearScale } from './svg'

export const FIGURE_KINDS = ['trajectories', 'energy', 'stress', 'cluster-example'] as const
export type FigureKind = (typeof FIGURE_KINDS)[number]

const COLORS = ['#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e']

function requireOneD(frames: Frame[], kind: string): void {
  if (frames[0].particles.x[0].length !== 1) {
    throw new SchemaError(`${kind} figure requires a 1D dump`)
  }
}

/** Particle worldlines x(t): each particle of a frame connects to the
 * nearest particle of the next frame (sticky merges keep this faithful
 * in one dimension). */
export function renderTrajectories(frames: Frame[]): string {
  requireOneD(frames, 'trajectories')
  const svg = new SvgCanvas()
  const allX = frames.flatMap((f) => f.particles.x.map((v) => v[0]))
  const xs = linearScale(extent(frames.map((f) => f.t), 0.02), svg.xRange())
  const ys = linearScale(extent(allX), svg.yRange())
  for (let k = 0; k + 1 < frames.length; k++) {
    const a = frames[k]
    const b = frames[k + 1]
    const bx = b.particles.x.map((v) => v[0])
    a.particles.x.forEach((pos, i) => {
      let best = 0
      let bestDist = Infinity
      bx.forEach((q, j) => {
        const dist = Math.abs(q - pos[0])
        if (dist < bestDist) {
          bestDist = dist
          best = j
        }
      })
      const w = 0.8 + 6 * Math.sqrt(a.particles.m[i])
      svg.polyline(
        [[xs(a.t), ys(pos[0])], [xs(b.t), ys(bx[best])]],
        `stroke="${COLORS[0]}" stroke-width="${w.toFixed(2)}" stroke-opacity="0.55"`)
    })
  }
  for (const f of frames) {
    f.particles.x.forEach((pos, i) => {
      svg.circle(xs(f.t), ys(pos[0]), 1.2 + 3 * Math.sqrt(f.particles.m[i]),
        `fill="${COLORS[1]}" fill-opacity="0.7"`)
    })
  }
  svg.axes(xs, ys, 't', 'position', 'particle trajectories')
  return svg.render()
}

export function renderEnergy(frames: Frame[]): string {
  const svg = new SvgCanvas()
  const xs = linearScale(extent(frames.map((f) => f.t), 0.02), svg.xRange())
  const all = frames.flatMap((f) => [f.energies.kinetic, f.energies.internal, f.energies.total])
  const ys = linearScale(extent(all.concat([0])), svg.yRange())
  const series: Array<[string, (f: Frame) => number]> = [
    ['total', (f) => f.energies.total],
    ['kinetic', (f) => f.energies.kinetic],
    ['internal', (f) => f.energies.internal],
  ]
  series.forEach(([label, get], i) => {
    svg.polyline(frames.map((f) => [xs(f.t), ys(get(f))] as [number, number]),
      `stroke="${COLORS[i]}" stroke-width="2"`)
  })
  svg.legend(series.map(([label], i) => [label, COLORS[i]]))
  svg.axes(xs, ys, 't', 'energy', 'energy budget')
  return svg.render()
}

/** Per-step ledger quantities against time. */
export function renderStress(frames: Frame[]): string {
  const steps = frames.filter((f) => f.report !== null)
  if (steps.length === 0) throw new SchemaError('stress figure needs step reports')
  const svg = new SvgCanvas()
  const xs = linearScale(extent(steps.map((f) => f.t), 0.02), svg.xRange())
  const series: Array<[string, (f: Frame) => number]> = [
    ['stress trace', (f) => f.report!.stress_trace],
    ['acceleration cost^2', (f) => f.report!.acc_cost_sq],
    ['dissipation', (f) => f.report!.dissipation],
  ]
  const all = steps.flatMap((f) => series.map(([, get]) => get(f)))
  const ys = linearScale(extent(all.concat([0])), svg.yRange())
  series.forEach(([label, get], i) => {
    svg.polyline(steps.map((f) => [xs(f.t), ys(get(f))] as [number, number]),
      `stroke="${COLORS[i]}" stroke-width="2"`)
    steps.forEach((f) => svg.circle(xs(f.t), ys(get(f)), 2.4, `fill="${COLORS[i]}"`))
  })
  svg.legend(series.map(([label], i) => [label, COLORS[i]]))
  svg.axes(xs, ys, 't', 'per-step amount', 'step ledgers')
  return svg.render()
}

/** Pooled-position convergence with the closed-form overlay
 * 2 (sqrt(1 + tau) - 1). */
export function renderClusterExample(rows: ClusterRow[]): string {
  const svg = new SvgCanvas()
  const logN = rows.map((row) => Math.log10(row.n))
  const xs = linearScale(extent(logN, 0.08), svg.xRange())
  const tau = rows[0].tau
  const analytic = 2 * (Math.sqrt(1 + tau) - 1)
  const values = rows.map((row) => row.pooled_position).concat([analytic])
  const ys = linearScale(extent(values, 0.25), svg.yRange())

  const [x0, x1] = svg.xRange()
  svg.line(x0, ys(analytic), x1, ys(analytic),
    `stroke="${COLORS[1]}" stroke-width="2" stroke-dasharray="7,4"`)
  svg.text(x1 - 4, ys(analytic) - 6,
    `analytic pooled position ${analytic.toFixed(6)}`,
    `text-anchor="end" font-size="12" fill="${COLORS[1]}"`)

  svg.polyline(rows.map((row) => [xs(Math.log10(row.n)), ys(row.pooled_position)] as [number, number]),
    `stroke="${COLORS[0]}" stroke-width="2"`)
  rows.forEach((row) => {
    svg.circle(xs(Math.log10(row.n)), ys(row.pooled_position), 3.5, `fill="${COLORS[0]}"`)
  })
  svg.axes(xs, ys, 'log10 sample count', 'pooled position',
    `cluster scenario, tau = ${tau}`)
  return svg.render()
}
