import { writeFileSync } from 'fs'

import { FIGURE_KINDS, FigureKind, renderClusterExample, renderEnergy,
         renderStress, renderTrajectories } from './figures'
import { readClusterTable, readFrames, SchemaError } from './schema'

export { FIGURE_KINDS, FigureKind, SchemaError }
export { readFrames, readClusterTable } from './schema'
export * from './figures'

export interface PlotSpec {
  kind: FigureKind
  input: string
  output: string
}

/** Render one figure kind from a dump file (frames.jsonl, or cluster.csv
 * for the cluster-example kind) and write the SVG. */
export function render(spec: PlotSpec): string {
  let svg: string
  switch (spec.kind) {
    case 'trajectories':
      svg = renderTrajectories(readFrames(spec.input))
      break
    case 'energy':
      svg = renderEnergy(readFrames(spec.input))
      break
    case 'stress':
      svg = renderStress(readFrames(spec.input))
      break
    case 'cluster-example':
      svg = renderClusterExample(readClusterTable(spec.input))
      break
    default:
      throw new SchemaError(`unknown figure kind ${spec.kind}`)
  }
  writeFileSync(spec.output, svg)
  return svg
}
