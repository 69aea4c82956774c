/** Minimal SVG assembly: linear scales, polylines, axes. No DOM needed. */

export interface Scale {
  (v: number): number
  domain: [number, number]
  range: [number, number]
}

export function linearScale(domain: [number, number], range: [number, number]): Scale {
  const [d0, d1] = domain
  const [r0, r1] = range
  const span = d1 - d0 || 1
  const fn = ((v: number) => r0 + ((v - d0) / span) * (r1 - r0)) as Scale
  fn.domain = domain
  fn.range = range
  return fn
}

export function extent(values: number[], pad = 0.05): [number, number] {
  let lo = Infinity
  let hi = -Infinity
  for (const v of values) {
    if (v < lo) lo = v
    if (v > hi) hi = v
  }
  if (!isFinite(lo)) return [0, 1]
  if (lo === hi) {
    lo -= 0.5
    hi += 0.5
  }
  const p = (hi - lo) * pad
  return [lo - p, hi + p]
}

export function ticks(lo: number, hi: number, count = 5): number[] {
  const span = hi - lo
  if (span <= 0) return [lo]
  const step = Math.pow(10, Math.floor(Math.log10(span / count)))
  const err = (count * step) / span
  const mult = err <= 0.15 ? 10 : err <= 0.35 ? 5 : err <= 0.75 ? 2 : 1
  const s = step * mult
  const start = Math.ceil(lo / s) * s
  const out: number[] = []
  for (let v = start; v <= hi + 1e-12 * span; v += s) out.push(Number(v.toPrecision(12)))
  return out
}

const fmt = (v: number) => {
  const a = Math.abs(v)
  if (a !== 0 && (a < 1e-3 || a >= 1e4)) return v.toExponential(1)
  return Number(v.toPrecision(6)).toString()
}

export class SvgCanvas {
  readonly width: number
  readonly height: number
  readonly margin = { top: 34, right: 18, bottom: 42, left: 60 }
  private parts: string[] = []

  constructor(width = 720, height = 480) {
    this.width = width
    this.height = height
  }

  get innerWidth(): number {
    return this.width - this.margin.left - this.margin.right
  }

  get innerHeight(): number {
    return this.height - this.margin.top - this.margin.bottom
  }

  xRange(): [number, number] {
    return [this.margin.left, this.width - this.margin.right]
  }

  yRange(): [number, number] {
    return [this.height - this.margin.bottom, this.margin.top]
  }

  add(fragment: string): void {
    this.parts.push(fragment)
  }

  line(x1: number, y1: number, x2: number, y2: number, style: string): void {
    this.add(`<line x1="${r(x1)}" y1="${r(y1)}" x2="${r(x2)}" y2="${r(y2)}" ${style}/>`)
  }

  circle(cx: number, cy: number, radius: number, style: string): void {
    this.add(`<circle cx="${r(cx)}" cy="${r(cy)}" r="${r(radius)}" ${style}/>`)
  }

  polyline(pts: Array<[number, number]>, style: string): void {
    const d = pts.map(([x, y]) => `${r(x)},${r(y)}`).join(' ')
    this.add(`<polyline points="${d}" fill="none" ${style}/>`)
  }

  text(x: number, y: number, content: string, style = ''): void {
    this.add(`<text x="${r(x)}" y="${r(y)}" ${style}>${escapeXml(content)}</text>`)
  }

  axes(xs: Scale, ys: Scale, xlabel: string, ylabel: string, title: string): void {
    const [x0, x1] = xs.range
    const [y0, y1] = ys.range
    const axisStyle = 'stroke="#333" stroke-width="1"'
    this.line(x0, y0, x1, y0, axisStyle)
    this.line(x0, y0, x0, y1, axisStyle)
    for (const t of ticks(xs.domain[0], xs.domain[1])) {
      const px = xs(t)
      this.line(px, y0, px, y0 + 4, axisStyle)
      this.text(px, y0 + 18, fmt(t), 'text-anchor="middle" font-size="11" fill="#333"')
    }
    for (const t of ticks(ys.domain[0], ys.domain[1])) {
      const py = ys(t)
      this.line(x0 - 4, py, x0, py, axisStyle)
      this.text(x0 - 7, py + 4, fmt(t), 'text-anchor="end" font-size="11" fill="#333"')
    }
    const midX = (x0 + x1) / 2
    this.text(midX, this.height - 8, xlabel, 'text-anchor="middle" font-size="13" fill="#111"')
    this.add(`<text x="14" y="${r((y0 + y1) / 2)}" text-anchor="middle" font-size="13" fill="#111" transform="rotate(-90 14 ${r((y0 + y1) / 2)})">${escapeXml(ylabel)}</text>`)
    this.text(midX, 20, title, 'text-anchor="middle" font-size="15" fill="#000"')
  }

  legend(entries: Array<[string, string]>): void {
    const x = this.width - this.margin.right - 150
    let y = this.margin.top + 8
    for (const [label, color] of entries) {
      this.line(x, y - 4, x + 22, y - 4, `stroke="${color}" stroke-width="2"`)
      this.text(x + 28, y, label, 'font-size="12" fill="#111"')
      y += 16
    }
  }

  render(): string {
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" ` +
      `height="${this.height}" viewBox="0 0 ${this.width} ${this.height}">\n` +
      `<rect width="${this.width}" height="${this.height}" fill="white"/>\n` +
      this.parts.join('\n') +
      '\n</svg>\n'
    )
  }
}

function r(v: number): string {
  return Number(v.toFixed(2)).toString()
}

function escapeXml(s: string): string {
  return s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;')
}
