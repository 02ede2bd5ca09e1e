from pipeline.commands import single_stage

Command = single_stage('write_distfit', 'distfit', 'Fit power laws to evacuation distances per intensity bin (powerlaw.json)')
